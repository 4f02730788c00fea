#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "qhconv/container.hpp"
#include "qhconv/train.hpp"

namespace qhconv {

/// Everything needed to evaluate a model or resume its training. Weights are
/// stored packed: a masked conv keeps out_ch * in_ch * |cells| weights.
struct Checkpoint {
  TrainState state;
  HyperParams hyper;
  TrainSeeds seeds;
  std::uint64_t prep_digest = 0;

  Container to_container() const;
  static Checkpoint from_container(const Container& c);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

std::string format_metrics_log(const std::vector<EpochMetrics>& log);
std::vector<EpochMetrics> parse_metrics_log(const std::string& text);

}  // namespace qhconv
