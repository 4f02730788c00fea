#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qhconv/container.hpp"
#include "qhconv/tensor.hpp"

namespace qhconv {

struct Dataset {
  Tensor<float> images;  // (N, C, H, W)
  std::vector<int> labels;
  int class_count = 10;
  std::string split;

  std::size_t size() const { return labels.size(); }
  Dataset subset(std::span<const std::size_t> indices) const;
  /// Throws std::invalid_argument if shapes or labels are inconsistent.
  void validate() const;
};

enum class CifarKind { Cifar10, Cifar100 };

/// Reads CIFAR binary batches: per record one label byte (two for CIFAR-100,
/// coarse then fine; the fine label is used) followed by 3072 channel-major
/// pixel bytes. Pixels are scaled to [0, 1].
Dataset load_cifar_binary(const std::vector<std::filesystem::path>& paths,
                          CifarKind kind = CifarKind::Cifar10,
                          const std::string& split = "train");

/// Writes records in the same layout; used for fixtures and exports.
void write_cifar_binary(const Dataset& data, const std::filesystem::path& path,
                        CifarKind kind = CifarKind::Cifar10);

/// Per-image global contrast normalization: subtract the image mean, divide
/// by max(std, floor).
template <class Real>
void gcn(Tensor<Real>& images, double floor = 1e-8);

struct ZcaTransform {
  std::size_t dim = 0;
  double epsilon = 0.0;
  std::vector<double> mean;       // dim
  std::vector<double> whitening;  // dim x dim, row-major, symmetric

  std::uint64_t digest() const;
};

/// Fits W = U diag(1 / sqrt(lambda + eps)) U^T on the (population)
/// covariance of the flattened images. 64-bit throughout.
template <class Real>
ZcaTransform zca_fit(const Tensor<Real>& images, double epsilon = 1e-2);

/// x <- W (x - mean) for every item.
template <class Real>
void zca_apply(const ZcaTransform& t, Tensor<Real>& images);

/// Preprocessing fitted on a training split and replayed on any other split.
struct Preprocessing {
  bool use_gcn = true;
  double gcn_floor = 1e-8;
  std::optional<ZcaTransform> zca;

  void apply(Tensor<float>& images) const;
  std::uint64_t digest() const;

  void store(Container& c) const;
  static Preprocessing restore(const Container& c);
  void save(const std::filesystem::path& path) const;
  static Preprocessing load(const std::filesystem::path& path);
};

Preprocessing fit_preprocessing(const Dataset& train, bool use_gcn, bool use_zca,
                                double zca_epsilon);

/// Class-balanced subset with n_total / class_count images per class.
/// Warns on stderr and rounds down when n_total is not divisible.
Dataset subsample(const Dataset& data, std::size_t n_total, std::uint64_t seed);

/// Fisher-Yates permutation of [0, n) driven by std::mt19937_64(seed).
std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed);

struct Batch {
  Tensor<float> images;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

/// Mini-batches of one epoch. The order is a permutation seeded by
/// (shuffle_seed, epoch); the last partial batch is kept.
class Batches {
 public:
  Batches(const Dataset& data, std::size_t batch_size, std::uint64_t shuffle_seed,
          int epoch = 0);

  std::size_t size() const { return (order_.size() + batch_size_ - 1) / batch_size_; }
  Batch operator[](std::size_t i) const;
  const std::vector<std::size_t>& order() const { return order_; }

  class iterator {
   public:
    iterator(const Batches* owner, std::size_t i) : owner_(owner), i_(i) {}
    Batch operator*() const { return (*owner_)[i_]; }
    iterator& operator++() {
      ++i_;
      return *this;
    }
    bool operator==(const iterator& o) const { return i_ == o.i_; }

   private:
    const Batches* owner_;
    std::size_t i_;
  };
  iterator begin() const { return {this, 0}; }
  iterator end() const { return {this, size()}; }

 private:
  const Dataset* data_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
};

Batches batches(const Dataset& data, std::size_t batch_size,
                std::uint64_t shuffle_seed, int epoch = 0);

/// Dataset cache in the shared container format.
void save_dataset(const Dataset& data, const std::filesystem::path& path,
                  const Preprocessing* prep = nullptr);
Dataset load_dataset(const std::filesystem::path& path,
                     std::uint64_t* prep_digest = nullptr);

}  // namespace qhconv
