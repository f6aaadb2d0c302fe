#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mcnn/data.hpp"
#include "mcnn/training.hpp"

namespace mcnn {

// Every tunable of a run. Defaults are the published hyperparameters.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string data_root;
  std::string index;  // prepared index CSV; built from data_root when empty
  SplitFractions fractions{};
  std::size_t batch_size = 32;
  double learning_rate = 0.001;
  std::size_t epochs = 15;
  std::string head = "softmax2";
  double bn_momentum = 0.99;
  double bn_epsilon = 1e-3;
  double plateau_factor = 0.5;
  std::size_t plateau_patience = 3;
  double plateau_min_lr = 1e-6;
  double early_stop_threshold = 0.99;
  std::size_t lime_samples = 1000;
  double lime_kernel_width = 0.25;
  double lime_ridge = 1.0;
  std::size_t top_k = 5;
  std::size_t shap_samples = 2048;
  std::string segmenter = "grid";
  std::string baseline = "mean";
  std::string out_dir = "run";
};

// Flat JSON object; unknown keys and wrong types are rejected.
RunConfig parse_run_config(const std::string& json_text);
std::string run_config_to_json(const RunConfig& config);

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitCorrupt = 4;

// Keeps large activation buffers on the heap (glibc); a no-op elsewhere.
void configure_allocator();

// Entry point shared by the executable and tests. `args` excludes the
// program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mcnn
