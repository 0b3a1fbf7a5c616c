#pragma once

#include <Eigen/Dense>

#include <map>
#include <string>
#include <vector>

namespace sedt {

/// Versioned checkpoint container: a JSON header (format version, config
/// snapshot, config hash, normalization stats, tensor index) followed by
/// raw little-endian float32 tensor data in index order.
struct Checkpoint {
  int format_version = 1;
  std::string config_json;  // resolved model+data config snapshot
  std::string config_hash;
  std::vector<double> norm_mean;
  std::vector<double> norm_std;
  std::vector<std::string> tensor_order;
  std::map<std::string, Eigen::MatrixXf> tensors;
};

std::string config_hash(const std::string& canonical_json);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

/// Loads a checkpoint. When expected_config_hash is non-empty and differs
/// from the stored hash, throws unless force_transfer is set.
Checkpoint load_checkpoint(const std::string& path,
                           const std::string& expected_config_hash = "",
                           bool force_transfer = false);

}  // namespace sedt
