#pragma once

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>
#include <system_error>

#include "disdop/errors.hpp"
#include "disdop/fusion.hpp"
#include "disdop/distill.hpp"
#include "disdop/harness.hpp"
#include "disdop/relational.hpp"

namespace disdop::config {

inline fusion::FusionStrategy parse_strategy(std::string_view token) {
  if (token == "saod") return fusion::FusionStrategy::SemanticAdaptive;
  if (token == "global-lof") return fusion::FusionStrategy::GlobalLof;
  if (token == "none") return fusion::FusionStrategy::NoFilter;
  throw InvalidConfig("unknown fusion strategy '" + std::string(token) +
                      "' (expected saod, global-lof, or none)");
}

inline std::string strategy_name(fusion::FusionStrategy s) {
  switch (s) {
    case fusion::FusionStrategy::SemanticAdaptive: return "saod";
    case fusion::FusionStrategy::GlobalLof: return "global-lof";
    case fusion::FusionStrategy::NoFilter: return "none";
  }
  throw InvalidConfig("unknown fusion strategy value");
}

inline relational::DistillScope parse_scope(std::string_view token) {
  if (token == "point") return relational::DistillScope::PointWise;
  if (token == "image") return relational::DistillScope::WithinImage;
  if (token == "batch") return relational::DistillScope::WithinBatch;
  throw InvalidConfig("unknown relational scope '" + std::string(token) +
                      "' (expected point, image, or batch)");
}

inline std::string scope_name(relational::DistillScope s) {
  switch (s) {
    case relational::DistillScope::PointWise: return "point";
    case relational::DistillScope::WithinImage: return "image";
    case relational::DistillScope::WithinBatch: return "batch";
  }
  throw InvalidConfig("unknown relational scope value");
}

struct RelationalOptions {
  relational::DistillScope scope = relational::DistillScope::WithinBatch;
  double rho = 0.0;
};

/// One bag of knobs for every subcommand; each consumes the sections it
/// understands. Defaults here are the library defaults, a config file
/// overrides them, and explicit command-line flags override the file.
struct CliConfig {
  fusion::FusionConfig fusion;
  distill::BackboneLossConfig backbone;
  RelationalOptions relational;
  harness::SynthConfig synth;
  harness::DescentConfig descent;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n';
  };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline double parse_double(std::string_view value, std::string_view key) {
  double out = 0.0;
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end)
    throw InvalidConfig("value for '" + std::string(key) +
                        "' is not a number: '" + std::string(value) + "'");
  return out;
}

inline std::uint64_t parse_u64(std::string_view value, std::string_view key) {
  std::uint64_t out = 0;
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end)
    throw InvalidConfig("value for '" + std::string(key) +
                        "' is not a non-negative integer: '" +
                        std::string(value) + "'");
  return out;
}

inline std::size_t parse_size(std::string_view value, std::string_view key) {
  return static_cast<std::size_t>(parse_u64(value, key));
}

}  // namespace detail

/// Applies one dotted key. Unknown keys are rejected so typos cannot
/// silently fall back to defaults.
inline void set_key(CliConfig& cfg, std::string_view key,
                    std::string_view value) {
  using detail::parse_double;
  using detail::parse_size;
  using detail::parse_u64;

  if (key == "fusion.gamma") cfg.fusion.gamma = parse_double(value, key);
  else if (key == "fusion.gamma_lof") cfg.fusion.gamma_lof = parse_double(value, key);
  else if (key == "fusion.tau_lof") cfg.fusion.tau_lof = parse_double(value, key);
  else if (key == "fusion.tau") cfg.fusion.tau = parse_double(value, key);
  else if (key == "fusion.k_lof") cfg.fusion.k_lof = parse_size(value, key);
  else if (key == "fusion.strategy") cfg.fusion.strategy = parse_strategy(value);
  else if (key == "backbone.tau_t") cfg.backbone.tau_t = parse_double(value, key);
  else if (key == "backbone.tau_s") cfg.backbone.tau_s = parse_double(value, key);
  else if (key == "backbone.lambda_cosine") cfg.backbone.lambda_cosine = parse_double(value, key);
  else if (key == "backbone.lambda_attn") cfg.backbone.lambda_attn = parse_double(value, key);
  else if (key == "relational.scope") cfg.relational.scope = parse_scope(value);
  else if (key == "relational.rho") cfg.relational.rho = parse_double(value, key);
  else if (key == "synth.n_clusters") cfg.synth.n_clusters = parse_size(value, key);
  else if (key == "synth.patches_per_cluster") cfg.synth.patches_per_cluster = parse_size(value, key);
  else if (key == "synth.dim_struct") cfg.synth.dim_struct = parse_size(value, key);
  else if (key == "synth.dim_sem") cfg.synth.dim_sem = parse_size(value, key);
  else if (key == "synth.noise_sigma") cfg.synth.noise_sigma = parse_double(value, key);
  else if (key == "synth.outlier_count") cfg.synth.outlier_count = parse_size(value, key);
  else if (key == "synth.outlier_scale") cfg.synth.outlier_scale = parse_double(value, key);
  else if (key == "synth.seed") cfg.synth.seed = parse_u64(value, key);
  else if (key == "descent.learning_rate") cfg.descent.learning_rate = parse_double(value, key);
  else if (key == "descent.steps") cfg.descent.steps = parse_size(value, key);
  else if (key == "descent.record_every") cfg.descent.record_every = parse_size(value, key);
  else
    throw InvalidConfig("unknown config key '" + std::string(key) + "'");
}

/// Plain-text config: one `key = value` per line, `#` starts a comment
/// line, blank lines ignored. Values run to end of line (first `=` splits).
inline void load_config_file(CliConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open config file: " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view stripped = detail::trim(line);
    if (stripped.empty() || stripped.front() == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string_view::npos)
      throw InvalidConfig(path + ":" + std::to_string(line_no) +
                          ": expected key=value");
    const std::string_view key = detail::trim(stripped.substr(0, eq));
    const std::string_view value = detail::trim(stripped.substr(eq + 1));
    if (key.empty())
      throw InvalidConfig(path + ":" + std::to_string(line_no) +
                          ": empty key");
    set_key(cfg, key, value);
  }
}

}  // namespace disdop::config
