#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include <Eigen/Dense>

#include "cgmmsep/network.hpp"
#include "cgmmsep/signal.hpp"
#include "cgmmsep/training.hpp"

namespace cgmm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// "CGCK", u32 version, topology descriptor, both parameter vectors (float64),
// both Adam states, learning rate, epoch counter and last epoch loss.
struct Checkpoint {
  std::string mask_topology;
  std::string loc_topology;
  StftConfig stft;
  int sample_rate = 8000;
  Eigen::VectorXd mask_params;
  Eigen::VectorXd loc_params;
  AdamState mask_adam;
  AdamState loc_adam;
  double learning_rate = 1e-3;
  std::uint64_t epoch = 0;
  double last_epoch_loss = 0.0;

  // "<mask>|<loc>|window_len=..,hop=..,window=..,sample_rate=.."
  std::string topology() const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct Model {
  std::unique_ptr<MaskNetwork> mask;
  std::unique_ptr<LocalizationMap> loc;
};

// Rebuilds the networks and loads their parameters; sizes must match.
Model instantiate(const Checkpoint& ck);

Checkpoint make_checkpoint(const MaskNetwork& g, const LocalizationMap& h, const StftConfig& stft,
                           int sample_rate);

}  // namespace cgmm
