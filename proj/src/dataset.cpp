#include "qhconv/dataset.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <iterator>
#include <random>

#include "qhconv/errors.hpp"
#include "qhconv/numeric.hpp"

namespace qhconv {

namespace {

constexpr std::size_t kCifarPixels = 3 * 32 * 32;

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::uint64_t hash_doubles(std::span<const double> xs, std::uint64_t h) {
  return fnv1a({reinterpret_cast<const std::uint8_t*>(xs.data()), xs.size_bytes()}, h);
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.class_count = class_count;
  out.split = split;
  Shape s = images.shape();
  s[0] = indices.size();
  out.images = Tensor<float>(s);
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = images.item(indices[i]);
    std::copy(src.begin(), src.end(), out.images.item(i).begin());
    out.labels.push_back(labels.at(indices[i]));
  }
  return out;
}

void Dataset::validate() const {
  if (labels.empty()) throw std::invalid_argument("dataset is empty");
  if (images.rank() != 4 || images.dim(0) != labels.size())
    throw std::invalid_argument("dataset images do not match labels");
  for (int y : labels)
    if (y < 0 || y >= class_count)
      throw std::invalid_argument("label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(class_count) + ")");
}

Dataset load_cifar_binary(const std::vector<std::filesystem::path>& paths,
                          CifarKind kind, const std::string& split) {
  if (paths.empty()) throw IoError("no CIFAR files given");
  const std::size_t label_bytes = kind == CifarKind::Cifar100 ? 2 : 1;
  const std::size_t record = label_bytes + kCifarPixels;

  std::vector<std::uint8_t> raw;
  for (const auto& p : paths) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open CIFAR file " + p.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (bytes.empty()) throw IoError("empty CIFAR file " + p.string());
    if (bytes.size() % record != 0)
      throw IoError("CIFAR file " + p.string() + " has " + std::to_string(bytes.size()) +
                    " bytes, not a multiple of the record length " +
                    std::to_string(record));
    raw.insert(raw.end(), bytes.begin(), bytes.end());
  }

  const std::size_t n = raw.size() / record;
  Dataset d;
  d.split = split;
  d.class_count = kind == CifarKind::Cifar100 ? 100 : 10;
  d.images = Tensor<float>({n, 3, 32, 32});
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = raw.data() + i * record;
    d.labels[i] = rec[label_bytes - 1];
    float* dst = d.images.item(i).data();
    for (std::size_t j = 0; j < kCifarPixels; ++j)
      dst[j] = static_cast<float>(rec[label_bytes + j]) / 255.0f;
  }
  d.validate();
  return d;
}

void write_cifar_binary(const Dataset& data, const std::filesystem::path& path,
                        CifarKind kind) {
  if (data.images.rank() != 4 || data.images.size() / std::max<std::size_t>(1, data.size()) != kCifarPixels)
    throw std::invalid_argument("write_cifar_binary: 3x32x32 images expected");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (kind == CifarKind::Cifar100) out.put(0);
    out.put(static_cast<char>(data.labels[i]));
    for (float v : data.images.item(i))
      out.put(static_cast<char>(static_cast<std::uint8_t>(
          std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

template <class Real>
void gcn(Tensor<Real>& images, double floor) {
  const std::size_t n = images.dim(0);
  for (std::size_t i = 0; i < n; ++i) {
    auto x = images.item(i);
    double mean = 0.0;
    for (Real v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double var = 0.0;
    for (Real v : x) var += (v - mean) * (v - mean);
    const double sd = std::max(std::sqrt(var / static_cast<double>(x.size())), floor);
    for (Real& v : x) v = static_cast<Real>((v - mean) / sd);
  }
}

std::uint64_t ZcaTransform::digest() const {
  std::uint64_t h = fnv1a({reinterpret_cast<const std::uint8_t*>(&epsilon), sizeof epsilon});
  h = hash_doubles(mean, h);
  return hash_doubles(whitening, h);
}

template <class Real>
ZcaTransform zca_fit(const Tensor<Real>& images, double epsilon) {
  if (epsilon <= 0.0) throw std::invalid_argument("zca_fit: epsilon must be > 0");
  const std::size_t n = images.dim(0);
  if (n < 2) throw std::invalid_argument("zca_fit: need at least 2 images");
  const std::size_t dim = images.size() / n;

  MatD X(n, dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) X(i, j) = images[i * dim + j];
  const Eigen::RowVectorXd mu = X.colwise().mean();
  X.rowwise() -= mu;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
  cov.selfadjointView<Eigen::Lower>().rankUpdate(X.transpose(), 1.0 / double(n));
  cov.triangularView<Eigen::StrictlyUpper>() = cov.transpose();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success)
    throw EngineFault("zca_fit: eigendecomposition did not converge");
  // Clamp tiny negative eigenvalues from round-off before the square root.
  const Eigen::VectorXd scale =
      (eig.eigenvalues().array().max(0.0) + epsilon).rsqrt().matrix();
  const Eigen::MatrixXd& U = eig.eigenvectors();
  Eigen::MatrixXd W = U * scale.asDiagonal() * U.transpose();
  W = 0.5 * (W + W.transpose()).eval();

  ZcaTransform t;
  t.dim = dim;
  t.epsilon = epsilon;
  t.mean.assign(mu.data(), mu.data() + dim);
  t.whitening.resize(dim * dim);
  Eigen::Map<MatD>(t.whitening.data(), dim, dim) = W;
  return t;
}

template <class Real>
void zca_apply(const ZcaTransform& t, Tensor<Real>& images) {
  const std::size_t n = images.dim(0);
  const std::size_t dim = images.size() / std::max<std::size_t>(n, 1);
  if (dim != t.dim)
    throw std::invalid_argument("zca_apply: image dimension " + std::to_string(dim) +
                                " does not match transform " + std::to_string(t.dim));
  Eigen::Map<const MatD> W(t.whitening.data(), dim, dim);
  Eigen::Map<const Eigen::RowVectorXd> mu(t.mean.data(), dim);
  constexpr std::size_t kChunk = 512;
  MatD X, Y;
  for (std::size_t lo = 0; lo < n; lo += kChunk) {
    const std::size_t rows = std::min(kChunk, n - lo);
    X.resize(rows, dim);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < dim; ++j) X(i, j) = images[(lo + i) * dim + j];
    X.rowwise() -= mu;
    Y.noalias() = X * W;  // W is symmetric, so rows map to (W x)^T
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < dim; ++j)
        images[(lo + i) * dim + j] = static_cast<Real>(Y(i, j));
  }
}

void Preprocessing::apply(Tensor<float>& images) const {
  if (use_gcn) gcn(images, gcn_floor);
  if (zca) zca_apply(*zca, images);
}

std::uint64_t Preprocessing::digest() const {
  std::uint8_t flag = use_gcn ? 1 : 0;
  std::uint64_t h = fnv1a({&flag, 1});
  h = fnv1a({reinterpret_cast<const std::uint8_t*>(&gcn_floor), sizeof gcn_floor}, h);
  if (zca) {
    const auto z = zca->digest();
    h = fnv1a({reinterpret_cast<const std::uint8_t*>(&z), sizeof z}, h);
  }
  return h;
}

void Preprocessing::store(Container& c) const {
  c.set_meta("prep.gcn", use_gcn ? "1" : "0");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", gcn_floor);
  c.set_meta("prep.gcn_floor", buf);
  c.set_meta("prep.digest", std::to_string(digest()));
  if (zca) {
    std::snprintf(buf, sizeof buf, "%.17g", zca->epsilon);
    c.set_meta("prep.zca_epsilon", buf);
    c.arrays.push_back(NamedArray::from<double>("zca.mean", DType::F64, {zca->dim},
                                                zca->mean));
    c.arrays.push_back(NamedArray::from<double>(
        "zca.whitening", DType::F64, {zca->dim, zca->dim}, zca->whitening));
  }
}

Preprocessing Preprocessing::restore(const Container& c) {
  Preprocessing p;
  const auto g = c.get_meta("prep.gcn");
  if (!g) throw IoError("container holds no preprocessing record");
  p.use_gcn = *g == "1";
  p.gcn_floor = std::stod(c.get_meta("prep.gcn_floor").value_or("1e-8"));
  if (const auto* mean = c.find("zca.mean")) {
    ZcaTransform t;
    t.dim = static_cast<std::size_t>(mean->shape.at(0));
    t.epsilon = std::stod(c.get_meta("prep.zca_epsilon").value_or("0"));
    t.mean = mean->as<double>();
    t.whitening = c.array("zca.whitening").as<double>();
    p.zca = std::move(t);
  }
  if (const auto d = c.get_meta("prep.digest"); d && std::stoull(*d) != p.digest())
    throw IoError("preprocessing record is corrupt (digest mismatch)");
  return p;
}

void Preprocessing::save(const std::filesystem::path& path) const {
  Container c;
  c.digest = digest();
  c.set_meta("kind", "preprocessing");
  store(c);
  c.save(path);
}

Preprocessing Preprocessing::load(const std::filesystem::path& path) {
  return restore(Container::load(path));
}

Preprocessing fit_preprocessing(const Dataset& train, bool use_gcn, bool use_zca,
                                double zca_epsilon) {
  Preprocessing p;
  p.use_gcn = use_gcn;
  if (use_zca) {
    Tensor<float> x = train.images;
    if (use_gcn) gcn(x, p.gcn_floor);
    p.zca = zca_fit(x, zca_epsilon);
  }
  return p;
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

Dataset subsample(const Dataset& data, std::size_t n_total, std::uint64_t seed) {
  data.validate();
  if (n_total > data.size())
    throw std::invalid_argument("subsample: asked for " + std::to_string(n_total) +
                                " of " + std::to_string(data.size()) + " images");
  const auto classes = static_cast<std::size_t>(data.class_count);
  const std::size_t per_class = n_total / classes;
  if (n_total % classes != 0)
    std::cerr << "warning: subsample size " << n_total << " is not divisible by "
              << classes << " classes; using " << per_class * classes << "\n";

  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < data.size(); ++i)
    by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);

  std::vector<std::size_t> picked;
  for (std::size_t c = 0; c < classes; ++c) {
    auto& idx = by_class[c];
    if (idx.size() < per_class)
      throw std::invalid_argument("subsample: class " + std::to_string(c) + " has only " +
                                  std::to_string(idx.size()) + " images");
    const auto order = permutation(idx.size(), splitmix64(seed ^ splitmix64(c + 1)));
    for (std::size_t k = 0; k < per_class; ++k) picked.push_back(idx[order[k]]);
  }
  const auto mix = permutation(picked.size(), splitmix64(seed));
  std::vector<std::size_t> out(picked.size());
  for (std::size_t i = 0; i < picked.size(); ++i) out[i] = picked[mix[i]];
  return data.subset(out);
}

Batches::Batches(const Dataset& data, std::size_t batch_size,
                 std::uint64_t shuffle_seed, int epoch)
    : data_(&data), batch_size_(batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  order_ = permutation(data.size(),
                       splitmix64(shuffle_seed ^ splitmix64(static_cast<std::uint64_t>(epoch))));
}

Batch Batches::operator[](std::size_t i) const {
  const std::size_t lo = i * batch_size_;
  const std::size_t hi = std::min(order_.size(), lo + batch_size_);
  Batch b;
  b.indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(lo),
                   order_.begin() + static_cast<std::ptrdiff_t>(hi));
  Dataset sub = data_->subset(b.indices);
  b.images = std::move(sub.images);
  b.labels = std::move(sub.labels);
  return b;
}

Batches batches(const Dataset& data, std::size_t batch_size,
                std::uint64_t shuffle_seed, int epoch) {
  return Batches(data, batch_size, shuffle_seed, epoch);
}

void save_dataset(const Dataset& data, const std::filesystem::path& path,
                  const Preprocessing* prep) {
  data.validate();
  Container c;
  c.set_meta("kind", "dataset");
  c.set_meta("split", data.split);
  c.set_meta("class_count", std::to_string(data.class_count));
  std::vector<std::uint64_t> shape(data.images.shape().begin(), data.images.shape().end());
  c.arrays.push_back(NamedArray::from<float>("images", DType::F32, shape,
                                             data.images.values()));
  std::vector<std::int32_t> labels(data.labels.begin(), data.labels.end());
  c.arrays.push_back(NamedArray::from<std::int32_t>("labels", DType::I32,
                                                    {labels.size()}, labels));
  if (prep) {
    c.digest = prep->digest();
    c.set_meta("prep.digest", std::to_string(c.digest));
  }
  c.save(path);
}

Dataset load_dataset(const std::filesystem::path& path, std::uint64_t* prep_digest) {
  const Container c = Container::load(path);
  if (c.get_meta("kind") != "dataset")
    throw IoError(path.string() + " is not a dataset cache");
  Dataset d;
  d.split = c.get_meta("split").value_or("");
  d.class_count = std::stoi(c.get_meta("class_count").value_or("10"));
  const auto& img = c.array("images");
  d.images = Tensor<float>(Shape(img.shape.begin(), img.shape.end()), img.as<float>());
  const auto labels = c.array("labels").as<std::int32_t>();
  d.labels.assign(labels.begin(), labels.end());
  d.validate();
  if (prep_digest) *prep_digest = c.digest;
  return d;
}

template void gcn<float>(Tensor<float>&, double);
template void gcn<double>(Tensor<double>&, double);
template ZcaTransform zca_fit<float>(const Tensor<float>&, double);
template ZcaTransform zca_fit<double>(const Tensor<double>&, double);
template void zca_apply<float>(const ZcaTransform&, Tensor<float>&);
template void zca_apply<double>(const ZcaTransform&, Tensor<double>&);

}  // namespace qhconv
