// End-to-end tests of the command-line tool: every subcommand is driven as
// a subprocess and its stdout, exit code, and output files are checked
// against direct library calls on the same inputs.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "disdop/batch.hpp"
#include "disdop/core.hpp"
#include "disdop/distill.hpp"
#include "disdop/dsdp.hpp"
#include "disdop/fusion.hpp"
#include "disdop/harness.hpp"
#include "disdop/matrix.hpp"
#include "disdop/relational.hpp"

namespace {

using namespace disdop;

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

const std::filesystem::path& work_dir() {
  static const std::filesystem::path dir = [] {
    auto d = std::filesystem::temp_directory_path() /
             ("disdop_cli_tests_" + std::to_string(::getpid()));
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunResult run_cli(const std::string& args) {
  const auto out_path = work_dir() / "stdout.txt";
  const auto err_path = work_dir() / "stderr.txt";
  const std::string cmd = std::string("'") + DISDOP_CLI_PATH + "' " + args +
                          " > '" + out_path.string() + "' 2> '" +
                          err_path.string() + "'";
  const int status = std::system(cmd.c_str());
  RunResult res;
  res.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  res.out = slurp(out_path);
  res.err = slurp(err_path);
  return res;
}

std::map<std::string, std::string> parse_report(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos)
      kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

double as_double(const std::map<std::string, std::string>& kv,
                 const std::string& key) {
  REQUIRE(kv.count(key) == 1);
  return std::stod(kv.at(key));
}

std::string quoted(const std::filesystem::path& p) {
  return "'" + p.string() + "'";
}

std::string empty_config() {
  static const std::string path = [] {
    const auto p = work_dir() / "empty.conf";
    std::ofstream(p) << "# defaults only\n";
    return p.string();
  }();
  return path;
}

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(run_cli("--help").code == 0);
  CHECK(run_cli("fuse --help").code == 0);
  CHECK(run_cli("").code == 2);             // subcommand required
  CHECK(run_cli("--bogus").code == 2);      // unknown flag
  CHECK(run_cli("synth --out x --bogus 2").code == 2);
  CHECK(run_cli("fuse --sem only.dsdp --config c").code == 2);  // missing req
}

TEST_CASE("fixture synthesis is deterministic per seed") {
  const auto dir_a = work_dir() / "synth_a";
  const auto dir_b = work_dir() / "synth_b";
  const std::string flags = " --preset outliers --seed 11 --out ";
  const auto first = run_cli("synth" + flags + quoted(dir_a));
  const auto second = run_cli("synth" + flags + quoted(dir_b));
  REQUIRE(first.code == 0);
  REQUIRE(second.code == 0);
  CHECK(first.out == second.out);
  for (const char* name : {"f_struct.dsdp", "f_sem.dsdp", "labels.tsv"})
    CHECK(slurp(dir_a / name) == slurp(dir_b / name));

  const auto kv = parse_report(first.out);
  CHECK(kv.at("n") == "66");  // 4 x 16 + 2
  CHECK(kv.at("outlier_count") == "2");
  CHECK(kv.at("seed") == "11");

  // A different seed must change the bytes.
  const auto dir_c = work_dir() / "synth_c";
  REQUIRE(run_cli("synth --preset outliers --seed 12 --out " +
                  quoted(dir_c)).code == 0);
  CHECK(slurp(dir_a / "f_sem.dsdp") != slurp(dir_c / "f_sem.dsdp"));
}

TEST_CASE("synthesis presets configure the generator") {
  const auto clean = work_dir() / "synth_clean";
  const auto res = run_cli("synth --preset clean --seed 4 --out " +
                           quoted(clean));
  REQUIRE(res.code == 0);
  const auto kv = parse_report(res.out);
  CHECK(kv.at("outlier_count") == "0");
  const auto table = batch::load_labels((clean / "labels.tsv").string());
  CHECK(table.outlier_rows.empty());
  REQUIRE(table.labels.size() == 64);

  // Zero noise: rows of one cluster are byte-identical.
  const Matrix m = load_tensor((clean / "f_sem.dsdp").string()).to_matrix();
  for (std::size_t i = 1; i < 16; ++i)
    for (std::size_t k = 0; k < m.cols(); ++k)
      CHECK(m(i, k) == m(0, k));
}

TEST_CASE("fusion pipeline run matches the direct library call") {
  const auto dir = work_dir() / "synth_fuse";
  REQUIRE(run_cli("synth --preset outliers --seed 7 --out " +
                  quoted(dir)).code == 0);

  const auto fused_path = work_dir() / "fused.dsdp";
  const auto diag = work_dir() / "diag";
  const auto res = run_cli("fuse --struct " + quoted(dir / "f_struct.dsdp") +
                           " --sem " + quoted(dir / "f_sem.dsdp") +
                           " --config '" + empty_config() + "'" +
                           " --out " + quoted(fused_path) +
                           " --dump-diagnostics " + quoted(diag));
  REQUIRE(res.code == 0);
  const auto kv = parse_report(res.out);
  CHECK(kv.at("n") == "66");
  CHECK(kv.at("d_sem") == "8");
  CHECK(kv.at("strategy") == "saod");

  // Library reference on the same inputs.
  FeatureMap f_struct{load_tensor((dir / "f_struct.dsdp").string()).to_matrix(),
                      {}};
  FeatureMap f_sem{load_tensor((dir / "f_sem.dsdp").string()).to_matrix(), {}};
  const auto want =
      fusion::fuse_pipeline(f_struct, f_sem, fusion::FusionConfig{});

  const Matrix fused = load_tensor(fused_path.string()).to_matrix();
  CHECK(fused == want.fused.data);

  const Matrix s = load_tensor((diag / "S.dsdp").string()).to_matrix();
  CHECK(s == want.diagnostics.similarity.data);
  const ByteMatrix m = load_tensor((diag / "M.dsdp").string()).to_mask();
  CHECK(m == want.diagnostics.mask.data);
  const Matrix a = load_tensor((diag / "A.dsdp").string()).to_matrix();
  CHECK(a == want.diagnostics.attention.data);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) sum += a(i, j);
    CHECK(sum == Catch::Approx(1.0).margin(1e-9));
  }

  const auto report = slurp(diag / "report.txt");
  CHECK(report.find("n=66") != std::string::npos);
  CHECK(report.find("survivors.0=") != std::string::npos);

  // Re-running reproduces the output byte for byte.
  const auto fused2 = work_dir() / "fused2.dsdp";
  REQUIRE(run_cli("fuse --struct " + quoted(dir / "f_struct.dsdp") +
                  " --sem " + quoted(dir / "f_sem.dsdp") +
                  " --config '" + empty_config() + "'" +
                  " --out " + quoted(fused2)).code == 0);
  CHECK(slurp(fused_path) == slurp(fused2));
}

TEST_CASE("strategy flag and clean-data equivalence") {
  const auto dir = work_dir() / "synth_clean2";
  REQUIRE(run_cli("synth --preset clean --seed 9 --out " +
                  quoted(dir)).code == 0);

  const auto out_saod = work_dir() / "clean_saod.dsdp";
  const auto out_none = work_dir() / "clean_none.dsdp";
  const std::string base = "fuse --struct " + quoted(dir / "f_struct.dsdp") +
                           " --sem " + quoted(dir / "f_sem.dsdp") +
                           " --config '" + empty_config() + "'";
  REQUIRE(run_cli(base + " --strategy saod --out " +
                  quoted(out_saod)).code == 0);
  const auto none = run_cli(base + " --strategy none --out " +
                            quoted(out_none));
  REQUIRE(none.code == 0);
  CHECK(parse_report(none.out).at("strategy") == "none");
  CHECK(parse_report(none.out).at("total_outliers") == "0");

  // No anomalies to remove: filtering must not change a single byte.
  CHECK(slurp(out_saod) == slurp(out_none));
}

TEST_CASE("configuration precedence is flag over file over default") {
  const auto dir = work_dir() / "synth_prec";
  REQUIRE(run_cli("synth --preset clean --seed 3 --out " +
                  quoted(dir)).code == 0);
  const std::string base = "fuse --struct " + quoted(dir / "f_struct.dsdp") +
                           " --sem " + quoted(dir / "f_sem.dsdp");

  // Default: semantic-adaptive.
  const auto def = run_cli(base + " --config '" + empty_config() + "'");
  REQUIRE(def.code == 0);
  CHECK(parse_report(def.out).at("strategy") == "saod");

  // Config file overrides the default.
  const auto conf = work_dir() / "strategy.conf";
  std::ofstream(conf) << "fusion.strategy = none\n";
  const auto from_file = run_cli(base + " --config " + quoted(conf));
  REQUIRE(from_file.code == 0);
  CHECK(parse_report(from_file.out).at("strategy") == "none");

  // Flag overrides the config file.
  const auto from_flag =
      run_cli(base + " --config " + quoted(conf) + " --strategy global-lof");
  REQUIRE(from_flag.code == 0);
  CHECK(parse_report(from_flag.out).at("strategy") == "global-lof");
}

TEST_CASE("fusion rejects mismatched inputs and bad files") {
  const auto dir = work_dir() / "synth_mm";
  REQUIRE(run_cli("synth --preset clean --seed 5 --out " +
                  quoted(dir)).code == 0);
  const auto small = work_dir() / "small.dsdp";
  save_tensor(small.string(), Tensor::from_matrix(Matrix(3, 8, 1.0)));

  CHECK(run_cli("fuse --struct " + quoted(dir / "f_struct.dsdp") + " --sem " +
                quoted(small) + " --config '" + empty_config() + "'")
            .code == 4);

  CHECK(run_cli("fuse --struct missing.dsdp --sem missing.dsdp --config '" +
                empty_config() + "'")
            .code == 3);

  const auto garbage = work_dir() / "garbage.dsdp";
  std::ofstream(garbage, std::ios::binary) << "QSDPnotatensorfile";
  CHECK(run_cli("fuse --struct " + quoted(garbage) + " --sem " +
                quoted(garbage) + " --config '" + empty_config() + "'")
            .code == 3);

  const auto badconf = work_dir() / "bad.conf";
  std::ofstream(badconf) << "fusion.bogus = 1\n";
  CHECK(run_cli("fuse --struct " + quoted(dir / "f_struct.dsdp") + " --sem " +
                quoted(dir / "f_sem.dsdp") + " --config " + quoted(badconf))
            .code == 4);
}

TEST_CASE("backbone loss run matches the direct library call") {
  harness::SplitMix64 rng(21);
  Matrix tm(6, 4);
  Matrix sm(6, 4);
  for (double& x : tm.storage()) x = rng.next_gaussian();
  for (double& x : sm.storage()) x = rng.next_gaussian();
  const auto t_path = work_dir() / "teacher.dsdp";
  const auto s_path = work_dir() / "student.dsdp";
  save_tensor(t_path.string(), Tensor::from_matrix(tm));
  save_tensor(s_path.string(), Tensor::from_matrix(sm));

  const auto grad_path = work_dir() / "grad.dsdp";
  const auto res = run_cli("backbone-loss --teacher " + quoted(t_path) +
                           " --student " + quoted(s_path) + " --config '" +
                           empty_config() + "' --grad-out " +
                           quoted(grad_path));
  REQUIRE(res.code == 0);
  const auto kv = parse_report(res.out);

  const FeatureMap teacher{tm, {}};
  const FeatureMap student{sm, {}};
  const auto want =
      distill::backbone_loss(teacher, student, distill::BackboneLossConfig{});
  // %.17g text round-trips doubles exactly.
  CHECK(as_double(kv, "total") == want.value);
  CHECK(as_double(kv, "cosine") ==
        distill::cosine_distill_loss(teacher, student).value);
  CHECK(as_double(kv, "attn") ==
        distill::attention_distill_loss(teacher, student, 0.1, 1.0).value);
  CHECK(as_double(kv, "grad_norm") == frobenius_norm(want.grad_student));

  const Matrix grad = load_tensor(grad_path.string()).to_matrix();
  CHECK(grad == want.grad_student);
}

TEST_CASE("backbone loss respects temperature and weight flags") {
  const auto t_path = work_dir() / "teacher.dsdp";  // written above
  const auto res = run_cli("backbone-loss --teacher " + quoted(t_path) +
                           " --student " + quoted(t_path) + " --config '" +
                           empty_config() +
                           "' --tau-t 0.5 --tau-s 0.5");
  REQUIRE(res.code == 0);
  const auto kv = parse_report(res.out);
  CHECK(as_double(kv, "total") <= 1e-9);  // teacher == student, equal taus

  const auto cos_only = run_cli("backbone-loss --teacher " + quoted(t_path) +
                                " --student " + quoted(t_path) +
                                " --config '" + empty_config() +
                                "' --lambda-attn 0");
  REQUIRE(cos_only.code == 0);
  const auto kv2 = parse_report(cos_only.out);
  CHECK(kv2.at("total") == kv2.at("cosine"));
  CHECK(kv2.count("attn") == 0);  // inactive component not reported
}

TEST_CASE("relational loss run matches the direct library call") {
  harness::SplitMix64 rng(33);
  std::vector<relational::Instance> batch(4);
  for (std::size_t i = 0; i < 4; ++i) {
    batch[i].f_v = harness::gaussian_vector(rng, 5);
    batch[i].f_g = harness::gaussian_vector(rng, 5);
    batch[i].t = layer_normalize(harness::gaussian_vector(rng, 5));
    batch[i].f_c = harness::gaussian_vector(rng, 5);
    batch[i].image_id = "img" + std::to_string(i / 2);
    batch[i].category_id = "cat" + std::to_string(i);
  }
  const auto dir = work_dir() / "rbatch";
  batch::save_instance_batch(dir.string(), batch);

  const auto res = run_cli("relational-loss --batch " + quoted(dir) +
                           " --scope batch --rho 0.3");
  REQUIRE(res.code == 0);
  const auto kv = parse_report(res.out);
  const auto want = relational::relational_distill_loss(
      batch, relational::MuParam{0.3}, relational::DistillScope::WithinBatch);
  CHECK(as_double(kv, "value") == want.value);
  CHECK(as_double(kv, "mu") == relational::MuParam{0.3}.mu());
  CHECK(as_double(kv, "rho_grad") == want.grad_rho);
  CHECK(as_double(kv, "grad_norm") == frobenius_norm(want.grad_fc));
  CHECK(kv.at("pair_count") == "16");
  CHECK(std::abs(want.grad_rho) > 0.0);  // generic inputs move the mix

  // Scope pair counts across the three modes: 16 / 8 / 4.
  const auto image = run_cli("relational-loss --batch " + quoted(dir) +
                             " --scope image");
  REQUIRE(image.code == 0);
  CHECK(parse_report(image.out).at("pair_count") == "8");
  const auto point = run_cli("relational-loss --batch " + quoted(dir) +
                             " --scope point");
  REQUIRE(point.code == 0);
  const auto kvp = parse_report(point.out);
  CHECK(kvp.at("pair_count") == "4");
  CHECK(as_double(kvp, "value") == relational::point_kd_loss(batch).value);
  CHECK(as_double(kvp, "rho_grad") == 0.0);

  CHECK(run_cli("relational-loss --batch " + quoted(dir) +
                " --scope nowhere").code == 4);
  CHECK(run_cli("relational-loss --batch /nonexistent/dir").code == 3);
}

TEST_CASE("gradient check subcommand") {
  const auto cosine = run_cli("gradcheck --target cosine --seeds 5");
  CHECK(cosine.code == 0);
  const auto kv = parse_report(cosine.out);
  CHECK(kv.at("result") == "pass");
  CHECK(as_double(kv, "max_rel_error") < 1e-4);
  CHECK(kv.at("seeds") == "5");

  const auto rel = run_cli("gradcheck --target relational --seeds 5");
  CHECK(rel.code == 0);
  CHECK(parse_report(rel.out).at("result") == "pass");

  const auto attn = run_cli("gradcheck --target attn --seeds 5");
  CHECK(attn.code == 0);

  // The hidden tamper hook must trip the detector.
  const auto bad = run_cli("gradcheck --target cosine --seeds 5 --perturb");
  CHECK(bad.code == 1);
  CHECK(parse_report(bad.out).at("result") == "fail");

  CHECK(run_cli("gradcheck --target bogus").code == 4);
  CHECK(run_cli("gradcheck --target cosine --seeds 0").code == 4);
}
