#include "qhconv/train.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "qhconv/errors.hpp"
#include "qhconv/numeric.hpp"

namespace qhconv {

HyperParams HyperParams::scaled(int epochs) {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  HyperParams h;
  h.epochs = epochs;
  for (int full : {120, 170, 220})
    h.lr_drops.push_back(static_cast<int>(std::lround(full / 270.0 * epochs)));
  h.decay_start = epochs - static_cast<int>(std::lround(epochs / 3.0));
  h.warmup_epochs = 1;
  return h;
}

double HyperParams::lr_at(int epoch) const {
  double lr_e = lr;
  for (int d : lr_drops)
    if (epoch >= d) lr_e *= lr_factor;
  return lr_e;
}

double HyperParams::lr_at(int epoch, std::size_t batch, std::size_t batches_per_epoch) const {
  const double base = lr_at(epoch);
  if (epoch >= warmup_epochs) return base;
  const double done = static_cast<double>(epoch) * batches_per_epoch + batch + 1;
  return base * done / (static_cast<double>(warmup_epochs) * batches_per_epoch);
}

double HyperParams::wd_at(int epoch) const {
  if (decay_start < 0 || epoch < decay_start) return weight_decay;
  const int span = epochs - decay_start;
  if (span <= 0) return weight_decay_final;
  const double t = std::min(1.0, static_cast<double>(epoch - decay_start + 1) / span);
  return weight_decay + t * (weight_decay_final - weight_decay);
}

void HyperParams::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw std::invalid_argument("momentum must be in [0, 1)");
  if (weight_decay < 0.0 || weight_decay_final < 0.0)
    throw std::invalid_argument("weight decay must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (warmup_epochs < 0) throw std::invalid_argument("warmup must be >= 0");
}

std::string HyperParams::to_text() const {
  std::ostringstream o;
  o.precision(17);
  o << "lr = " << lr << "\nlr_factor = " << lr_factor << "\nlr_drops =";
  for (int d : lr_drops) o << ' ' << d;
  o << "\nmomentum = " << momentum << "\nweight_decay = " << weight_decay
    << "\nweight_decay_final = " << weight_decay_final
    << "\ndecay_start = " << decay_start << "\nwarmup_epochs = " << warmup_epochs
    << "\nbatch_size = " << batch_size
    << "\nepochs = " << epochs << '\n';
  return o.str();
}

HyperParams HyperParams::parse(const std::string& text) {
  HyperParams h;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    key.erase(key.find_last_not_of(' ') + 1);
    std::istringstream v(line.substr(eq + 1));
    if (key == "lr") v >> h.lr;
    else if (key == "lr_factor") v >> h.lr_factor;
    else if (key == "lr_drops") {
      h.lr_drops.clear();
      for (int d; v >> d;) h.lr_drops.push_back(d);
    } else if (key == "momentum") v >> h.momentum;
    else if (key == "weight_decay") v >> h.weight_decay;
    else if (key == "weight_decay_final") v >> h.weight_decay_final;
    else if (key == "decay_start") v >> h.decay_start;
    else if (key == "warmup_epochs") v >> h.warmup_epochs;
    else if (key == "batch_size") v >> h.batch_size;
    else if (key == "epochs") v >> h.epochs;
    else throw std::invalid_argument("unknown hyperparameter '" + key + "'");
  }
  return h;
}

SgdState SgdState::zeros_like(const Model<float>& model) {
  SgdState s;
  for (const auto* p : model.params()) s.velocity.emplace_back(p->shape());
  return s;
}

void sgd_step(std::vector<Tensor<float>*> params, const Gradients<float>& grads,
              SgdState& state, double lr, double wd, double momentum) {
  if (grads.size() != params.size() || state.velocity.size() != params.size())
    throw std::invalid_argument("sgd_step: gradient count does not match parameters");
  const float m = static_cast<float>(momentum), a = static_cast<float>(lr),
              d = static_cast<float>(wd);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = *params[i];
    auto& v = state.velocity[i];
    const auto& g = grads[i];
    if (g.size() != w.size()) throw std::invalid_argument("sgd_step: shape mismatch");
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = m * v[j] - a * (g[j] + d * w[j]);
      w[j] += v[j];
    }
  }
}

std::string metrics_header() { return "epoch\tlr\twd\ttrain_loss\ttest_error"; }

std::string format_metrics(const EpochMetrics& m) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d\t%.6g\t%.6g\t%.9g\t%.6f", m.epoch, m.lr, m.wd,
                m.train_loss, m.test_error);
  return buf;
}

namespace {

std::uint64_t batch_seed(std::uint64_t seed, int epoch, std::size_t batch) {
  return splitmix64(seed ^ splitmix64((static_cast<std::uint64_t>(epoch) << 32) ^ batch));
}

}  // namespace

TrainState train(const ModelConfig& config, const Dataset& train_set,
                 const Dataset* test_set, const HyperParams& hyper,
                 const TrainSeeds& seeds, const TrainOptions& opts,
                 const TrainState* resume) {
  hyper.validate();
  train_set.validate();
  TrainState st = resume ? *resume
                         : TrainState{build_model<float>(config, seeds.init), {}, 0, {}};
  if (st.model.config().digest() != config.digest())
    throw std::invalid_argument("resume state was trained with a different config");
  if (st.sgd.velocity.empty()) st.sgd = SgdState::zeros_like(st.model);

  const int stop = opts.stop_after < 0 ? hyper.epochs
                                       : std::min(hyper.epochs, opts.stop_after);
  for (int epoch = st.epoch; epoch < stop; ++epoch) {
    const double lr = hyper.lr_at(epoch), wd = hyper.wd_at(epoch);
    const Batches epoch_batches(train_set, hyper.batch_size, seeds.shuffle, epoch);
    double loss_sum = 0.0;
    Trace<float> trace;
    for (std::size_t b = 0; b < epoch_batches.size(); ++b) {
      const Batch batch = epoch_batches[b];
      const auto scores = st.model.forward(batch.images, trace, Mode::Train,
                                           batch_seed(seeds.dropout, epoch, b));
      auto loss = softmax_cross_entropy(scores, batch.labels);
      if (!std::isfinite(loss.loss))
        throw EngineFault("training diverged at epoch " + std::to_string(epoch + 1));
      loss_sum += loss.loss * static_cast<double>(batch.labels.size());
      auto grads = st.model.zero_gradients();
      st.model.backward(trace, loss.grad, &grads);
      sgd_step(st.model.params(), grads, st.sgd, hyper.lr_at(epoch, b, epoch_batches.size()),
               wd, hyper.momentum);
    }
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.lr = lr;
    m.wd = wd;
    m.train_loss = loss_sum / static_cast<double>(train_set.size());
    m.test_error = test_set ? error_rate(st.model, *test_set, opts.eval_batch, opts.threads)
                            : std::numeric_limits<double>::quiet_NaN();
    st.log.push_back(m);
    st.epoch = epoch + 1;
    if (opts.on_epoch) opts.on_epoch(st);
  }
  return st;
}

Tensor<float> predict_scores(const Model<float>& model, const Tensor<float>& images,
                             std::size_t batch, int threads) {
  const std::size_t n = images.dim(0);
  const std::size_t item = images.size() / std::max<std::size_t>(n, 1);
  const std::size_t classes = static_cast<std::size_t>(model.config().num_classes());
  Tensor<float> out({n, classes});
  batch = std::max<std::size_t>(batch, 1);
  const std::size_t chunks = (n + batch - 1) / batch;
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t lo = c * batch, hi = std::min(n, lo + batch);
    Shape s = images.shape();
    s[0] = hi - lo;
    Tensor<float> x(s, std::vector<float>(images.data() + lo * item,
                                          images.data() + hi * item));
    const auto scores = model.forward(x, Mode::Eval);
    std::copy(scores.data(), scores.data() + scores.size(), out.data() + lo * classes);
  });
  return out;
}

std::vector<int> predict_labels(const Model<float>& model, const Tensor<float>& images,
                                std::size_t batch, int threads) {
  const auto scores = predict_scores(model, images, batch, threads);
  const std::size_t n = scores.dim(0), c = scores.dim(1);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = scores.data() + i * c;
    labels[i] = static_cast<int>(std::max_element(row, row + c) - row);
  }
  return labels;
}

double error_rate(const Model<float>& model, const Dataset& data, std::size_t batch,
                  int threads) {
  const auto pred = predict_labels(model, data.images, batch, threads);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != data.labels[i];
  return static_cast<double>(wrong) / static_cast<double>(pred.size());
}

}  // namespace qhconv
