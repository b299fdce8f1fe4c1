// Command-line front end over the disdop headers. Every run is
// deterministic: the same inputs, flags, and seeds produce byte-identical
// output, and all floating-point values print with 17 significant digits
// so they round-trip exactly.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <system_error>
#include <vector>

#include <CLI11.hpp>

#include "disdop/batch.hpp"
#include "disdop/config.hpp"
#include "disdop/core.hpp"
#include "disdop/distill.hpp"
#include "disdop/dsdp.hpp"
#include "disdop/errors.hpp"
#include "disdop/fusion.hpp"
#include "disdop/harness.hpp"
#include "disdop/matrix.hpp"
#include "disdop/relational.hpp"

namespace {

using disdop::FeatureMap;
using disdop::Matrix;
using disdop::Tensor;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

FeatureMap load_feature_map(const std::string& path) {
  FeatureMap fm{disdop::load_tensor(path).to_matrix(), {}};
  fm.validate();
  return fm;
}

void make_directory(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw disdop::IoFailure("cannot create directory: " + dir);
}

// ---------------------------------------------------------------------------

struct FuseOpts {
  std::string f_struct;
  std::string f_sem;
  std::string config;
  std::string out;
  std::string diagnostics_dir;
  std::string strategy;
  double gamma = 0.0;
  double gamma_lof = 0.0;
  double tau_lof = 0.0;
  double tau = 0.0;
  std::size_t k_lof = 0;
  CLI::Option* o_strategy = nullptr;
  CLI::Option* o_gamma = nullptr;
  CLI::Option* o_gamma_lof = nullptr;
  CLI::Option* o_tau_lof = nullptr;
  CLI::Option* o_tau = nullptr;
  CLI::Option* o_k_lof = nullptr;
};

int do_fuse(const FuseOpts& opt) {
  disdop::config::CliConfig cfg;
  disdop::config::load_config_file(cfg, opt.config);
  if (opt.o_strategy->count())
    cfg.fusion.strategy = disdop::config::parse_strategy(opt.strategy);
  if (opt.o_gamma->count()) cfg.fusion.gamma = opt.gamma;
  if (opt.o_gamma_lof->count()) cfg.fusion.gamma_lof = opt.gamma_lof;
  if (opt.o_tau_lof->count()) cfg.fusion.tau_lof = opt.tau_lof;
  if (opt.o_tau->count()) cfg.fusion.tau = opt.tau;
  if (opt.o_k_lof->count()) cfg.fusion.k_lof = opt.k_lof;

  const FeatureMap f_struct = load_feature_map(opt.f_struct);
  const FeatureMap f_sem = load_feature_map(opt.f_sem);
  const auto result = disdop::fusion::fuse_pipeline(f_struct, f_sem, cfg.fusion);
  const auto& diag = result.diagnostics;

  std::size_t smin = diag.row_survivors.empty() ? 0 : diag.row_survivors[0];
  std::size_t smax = smin;
  for (std::size_t s : diag.row_survivors) {
    smin = std::min(smin, s);
    smax = std::max(smax, s);
  }

  std::cout << "n=" << f_struct.patches() << '\n'
            << "d_sem=" << f_sem.dim() << '\n'
            << "strategy=" << disdop::config::strategy_name(cfg.fusion.strategy)
            << '\n'
            << "total_outliers=" << diag.total_outliers << '\n'
            << "survivors_min=" << smin << '\n'
            << "survivors_max=" << smax << '\n';

  if (!opt.out.empty())
    disdop::save_tensor(opt.out, Tensor::from_matrix(result.fused.data));

  if (!opt.diagnostics_dir.empty()) {
    make_directory(opt.diagnostics_dir);
    const std::string& dir = opt.diagnostics_dir;
    disdop::save_tensor(dir + "/S.dsdp",
                        Tensor::from_matrix(diag.similarity.data));
    disdop::save_tensor(dir + "/M.dsdp", Tensor::from_mask(diag.mask.data));
    disdop::save_tensor(dir + "/A.dsdp",
                        Tensor::from_matrix(diag.attention.data));
    const std::string report = dir + "/report.txt";
    std::ofstream rep(report, std::ios::trunc);
    if (!rep) throw disdop::IoFailure("cannot open for writing: " + report);
    rep << "n=" << f_struct.patches() << '\n'
        << "strategy=" << disdop::config::strategy_name(cfg.fusion.strategy)
        << '\n'
        << "total_outliers=" << diag.total_outliers << '\n';
    for (std::size_t i = 0; i < diag.row_survivors.size(); ++i)
      rep << "survivors." << i << '=' << diag.row_survivors[i] << '\n';
    if (!rep.flush()) throw disdop::IoFailure("write failed: " + report);
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct BackboneOpts {
  std::string teacher;
  std::string student;
  std::string config;
  std::string grad_out;
  double tau_t = 0.0;
  double tau_s = 0.0;
  double lambda_cosine = 0.0;
  double lambda_attn = 0.0;
  CLI::Option* o_tau_t = nullptr;
  CLI::Option* o_tau_s = nullptr;
  CLI::Option* o_lambda_cosine = nullptr;
  CLI::Option* o_lambda_attn = nullptr;
};

int do_backbone(const BackboneOpts& opt) {
  disdop::config::CliConfig cfg;
  disdop::config::load_config_file(cfg, opt.config);
  if (opt.o_tau_t->count()) cfg.backbone.tau_t = opt.tau_t;
  if (opt.o_tau_s->count()) cfg.backbone.tau_s = opt.tau_s;
  if (opt.o_lambda_cosine->count())
    cfg.backbone.lambda_cosine = opt.lambda_cosine;
  if (opt.o_lambda_attn->count()) cfg.backbone.lambda_attn = opt.lambda_attn;
  cfg.backbone.validate();

  const FeatureMap teacher = load_feature_map(opt.teacher);
  const FeatureMap student = load_feature_map(opt.student);
  const auto total = disdop::distill::backbone_loss(teacher, student,
                                                    cfg.backbone);

  if (cfg.backbone.lambda_cosine > 0.0) {
    const auto part = disdop::distill::cosine_distill_loss(teacher, student);
    std::cout << "cosine=" << fmt(part.value) << '\n';
  }
  if (cfg.backbone.lambda_attn > 0.0) {
    const auto part = disdop::distill::attention_distill_loss(
        teacher, student, cfg.backbone.tau_t, cfg.backbone.tau_s);
    std::cout << "attn=" << fmt(part.value) << '\n';
  }
  std::cout << "total=" << fmt(total.value) << '\n'
            << "grad_norm=" << fmt(disdop::frobenius_norm(total.grad_student))
            << '\n';

  if (!opt.grad_out.empty())
    disdop::save_tensor(opt.grad_out, Tensor::from_matrix(total.grad_student));
  return 0;
}

// ---------------------------------------------------------------------------

struct RelationalOpts {
  std::string batch_dir;
  std::string config;
  std::string grad_out;
  std::string scope;
  double rho = 0.0;
  CLI::Option* o_config = nullptr;
  CLI::Option* o_scope = nullptr;
  CLI::Option* o_rho = nullptr;
};

int do_relational(const RelationalOpts& opt) {
  disdop::config::CliConfig cfg;
  if (opt.o_config->count()) disdop::config::load_config_file(cfg, opt.config);
  if (opt.o_scope->count())
    cfg.relational.scope = disdop::config::parse_scope(opt.scope);
  if (opt.o_rho->count()) cfg.relational.rho = opt.rho;

  const auto batch = disdop::batch::load_instance_batch(opt.batch_dir);
  const disdop::relational::MuParam mu{cfg.relational.rho};
  const auto res = disdop::relational::relational_distill_loss(
      batch, mu, cfg.relational.scope);
  const std::size_t pairs =
      disdop::relational::scope_pair_count(batch, cfg.relational.scope);

  std::cout << "value=" << fmt(res.value) << '\n'
            << "mu=" << fmt(mu.mu()) << '\n'
            << "pair_count=" << pairs << '\n'
            << "rho_grad=" << fmt(res.grad_rho) << '\n'
            << "grad_norm=" << fmt(disdop::frobenius_norm(res.grad_fc)) << '\n';

  if (!opt.grad_out.empty())
    disdop::save_tensor(opt.grad_out, Tensor::from_matrix(res.grad_fc));
  return 0;
}

// ---------------------------------------------------------------------------

struct GradcheckOpts {
  std::string target;
  std::size_t seeds = 10;
  bool perturb = false;
};

int do_gradcheck(const GradcheckOpts& opt) {
  disdop::harness::GradTarget target;
  if (opt.target == "cosine")
    target = disdop::harness::GradTarget::Cosine;
  else if (opt.target == "attn")
    target = disdop::harness::GradTarget::Attention;
  else if (opt.target == "relational")
    target = disdop::harness::GradTarget::Relational;
  else
    throw disdop::InvalidConfig("unknown gradcheck target '" + opt.target +
                                "' (expected cosine, attn, or relational)");
  if (opt.seeds < 1) throw disdop::InvalidConfig("--seeds must be >= 1");

  const auto suite =
      disdop::harness::run_gradient_suite(target, opt.seeds, opt.perturb);
  std::cout << "target=" << opt.target << '\n'
            << "seeds=" << suite.seeds << '\n'
            << "max_rel_error=" << fmt(suite.max_rel_error) << '\n'
            << "result=" << (suite.all_pass ? "pass" : "fail") << '\n';
  return suite.all_pass ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct SynthOpts {
  std::string out_dir;
  std::string config;
  std::string preset;
  std::size_t n_clusters = 0;
  std::size_t patches_per_cluster = 0;
  std::size_t dim_struct = 0;
  std::size_t dim_sem = 0;
  double noise_sigma = 0.0;
  std::size_t outlier_count = 0;
  double outlier_scale = 0.0;
  std::uint64_t seed = 0;
  CLI::Option* o_config = nullptr;
  CLI::Option* o_preset = nullptr;
  CLI::Option* o_n_clusters = nullptr;
  CLI::Option* o_patches_per_cluster = nullptr;
  CLI::Option* o_dim_struct = nullptr;
  CLI::Option* o_dim_sem = nullptr;
  CLI::Option* o_noise_sigma = nullptr;
  CLI::Option* o_outlier_count = nullptr;
  CLI::Option* o_outlier_scale = nullptr;
  CLI::Option* o_seed = nullptr;
};

int do_synth(const SynthOpts& opt) {
  disdop::config::CliConfig cfg;
  if (opt.o_config->count()) disdop::config::load_config_file(cfg, opt.config);
  if (opt.o_preset->count()) {
    if (opt.preset == "standard") {
      cfg.synth = disdop::harness::SynthConfig{};
    } else if (opt.preset == "clean") {
      cfg.synth = disdop::harness::SynthConfig{};
      cfg.synth.noise_sigma = 0.0;
    } else if (opt.preset == "outliers") {
      cfg.synth = disdop::harness::SynthConfig{};
      cfg.synth.outlier_count = 2;
    } else {
      throw disdop::InvalidConfig(
          "unknown preset '" + opt.preset +
          "' (expected standard, clean, or outliers)");
    }
  }
  if (opt.o_n_clusters->count()) cfg.synth.n_clusters = opt.n_clusters;
  if (opt.o_patches_per_cluster->count())
    cfg.synth.patches_per_cluster = opt.patches_per_cluster;
  if (opt.o_dim_struct->count()) cfg.synth.dim_struct = opt.dim_struct;
  if (opt.o_dim_sem->count()) cfg.synth.dim_sem = opt.dim_sem;
  if (opt.o_noise_sigma->count()) cfg.synth.noise_sigma = opt.noise_sigma;
  if (opt.o_outlier_count->count()) cfg.synth.outlier_count = opt.outlier_count;
  if (opt.o_outlier_scale->count()) cfg.synth.outlier_scale = opt.outlier_scale;
  if (opt.o_seed->count()) cfg.synth.seed = opt.seed;

  const auto data = disdop::harness::synth_block_features(cfg.synth);
  make_directory(opt.out_dir);
  disdop::save_tensor(opt.out_dir + "/f_struct.dsdp",
                      Tensor::from_matrix(data.f_struct.data));
  disdop::save_tensor(opt.out_dir + "/f_sem.dsdp",
                      Tensor::from_matrix(data.f_sem.data));
  disdop::batch::save_labels(opt.out_dir + "/labels.tsv", data.labels,
                             data.outlier_rows);

  std::cout << "n=" << data.f_struct.patches() << '\n'
            << "d_struct=" << cfg.synth.dim_struct << '\n'
            << "d_sem=" << cfg.synth.dim_sem << '\n'
            << "outlier_count=" << data.outlier_rows.size() << '\n'
            << "seed=" << cfg.synth.seed << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "deterministic patch-feature fusion and distillation toolkit (.dsdp "
      "tensors in, key=value text out)"};
  app.require_subcommand(1);

  FuseOpts fuse;
  auto* fuse_cmd = app.add_subcommand(
      "fuse", "Fuse structural and semantic patch features");
  fuse_cmd->add_option("--struct", fuse.f_struct,
                       "structural feature matrix (.dsdp, N x Ds)")
      ->required();
  fuse_cmd->add_option("--sem", fuse.f_sem,
                       "semantic feature matrix (.dsdp, N x Dm)")
      ->required();
  fuse_cmd->add_option("--config", fuse.config, "config file (key = value)")
      ->required();
  fuse.o_strategy = fuse_cmd->add_option(
      "--strategy", fuse.strategy, "saod | global-lof | none");
  fuse.o_gamma = fuse_cmd->add_option("--gamma", fuse.gamma,
                                      "attention similarity threshold");
  fuse.o_gamma_lof = fuse_cmd->add_option(
      "--gamma-lof", fuse.gamma_lof, "neighborhood similarity threshold");
  fuse.o_tau_lof =
      fuse_cmd->add_option("--tau-lof", fuse.tau_lof, "outlier score cutoff");
  fuse.o_tau = fuse_cmd->add_option("--tau", fuse.tau, "softmax temperature");
  fuse.o_k_lof =
      fuse_cmd->add_option("--k-lof", fuse.k_lof, "neighbor count for scoring");
  fuse_cmd->add_option("--out", fuse.out, "write fused features (.dsdp)");
  fuse_cmd->add_option("--dump-diagnostics", fuse.diagnostics_dir,
                       "write S/M/A tensors and a survivor report here");

  BackboneOpts backbone;
  auto* backbone_cmd = app.add_subcommand(
      "backbone-loss", "Feature and attention distillation loss");
  backbone_cmd->add_option("--teacher", backbone.teacher,
                           "teacher feature matrix (.dsdp)")
      ->required();
  backbone_cmd->add_option("--student", backbone.student,
                           "student feature matrix (.dsdp)")
      ->required();
  backbone_cmd->add_option("--config", backbone.config,
                           "config file (key = value)")
      ->required();
  backbone.o_tau_t = backbone_cmd->add_option("--tau-t", backbone.tau_t,
                                              "teacher temperature");
  backbone.o_tau_s = backbone_cmd->add_option("--tau-s", backbone.tau_s,
                                              "student temperature");
  backbone.o_lambda_cosine = backbone_cmd->add_option(
      "--lambda-cosine", backbone.lambda_cosine, "cosine term weight");
  backbone.o_lambda_attn = backbone_cmd->add_option(
      "--lambda-attn", backbone.lambda_attn, "attention term weight");
  backbone_cmd->add_option("--grad-out", backbone.grad_out,
                           "write the student gradient (.dsdp)");

  RelationalOpts relational;
  auto* relational_cmd = app.add_subcommand(
      "relational-loss", "Batch-level relational distillation loss");
  relational_cmd->add_option("--batch", relational.batch_dir,
                             "batch directory (four .dsdp tensors + "
                             "instances.tsv)")
      ->required();
  relational.o_config = relational_cmd->add_option(
      "--config", relational.config, "config file (key = value)");
  relational.o_scope = relational_cmd->add_option(
      "--scope", relational.scope, "point | image | batch");
  relational.o_rho = relational_cmd->add_option(
      "--rho", relational.rho, "mixing pre-activation (mu = logistic(rho))");
  relational_cmd->add_option("--grad-out", relational.grad_out,
                             "write the contextual-feature gradient (.dsdp)");

  GradcheckOpts gradcheck;
  auto* gradcheck_cmd = app.add_subcommand(
      "gradcheck", "Finite-difference verification of analytic gradients");
  gradcheck_cmd->add_option("--target", gradcheck.target,
                            "cosine | attn | relational")
      ->required();
  gradcheck_cmd->add_option("--seeds", gradcheck.seeds,
                            "number of random trials (default 10)");
  gradcheck_cmd->add_flag("--perturb", gradcheck.perturb)->group("");

  SynthOpts synth;
  auto* synth_cmd = app.add_subcommand(
      "synth", "Generate a clustered synthetic feature set");
  synth_cmd->add_option("--out", synth.out_dir, "output directory")->required();
  synth.o_config =
      synth_cmd->add_option("--config", synth.config, "config file");
  synth.o_preset = synth_cmd->add_option(
      "--preset", synth.preset, "standard | clean | outliers");
  synth.o_n_clusters =
      synth_cmd->add_option("--clusters", synth.n_clusters, "cluster count");
  synth.o_patches_per_cluster = synth_cmd->add_option(
      "--patches-per-cluster", synth.patches_per_cluster, "patches per cluster");
  synth.o_dim_struct = synth_cmd->add_option("--dim-struct", synth.dim_struct,
                                             "structural dimension");
  synth.o_dim_sem =
      synth_cmd->add_option("--dim-sem", synth.dim_sem, "semantic dimension");
  synth.o_noise_sigma =
      synth_cmd->add_option("--sigma", synth.noise_sigma, "noise level");
  synth.o_outlier_count = synth_cmd->add_option(
      "--outliers", synth.outlier_count, "injected semantic outliers");
  synth.o_outlier_scale = synth_cmd->add_option(
      "--outlier-scale", synth.outlier_scale, "outlier vector scale");
  synth.o_seed = synth_cmd->add_option("--seed", synth.seed, "generator seed");

  int rc = 0;
  fuse_cmd->callback([&] { rc = do_fuse(fuse); });
  backbone_cmd->callback([&] { rc = do_backbone(backbone); });
  relational_cmd->callback([&] { rc = do_relational(relational); });
  gradcheck_cmd->callback([&] { rc = do_gradcheck(gradcheck); });
  synth_cmd->callback([&] { rc = do_synth(synth); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const disdop::IoFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const disdop::BadMagic& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const disdop::UnsupportedVersion& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const disdop::UnsupportedDtype& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const disdop::LengthMismatch& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const disdop::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return rc;
}
