#include "qhconv/checkpoint.hpp"

#include <sstream>

#include "qhconv/errors.hpp"

namespace qhconv {

namespace {

std::vector<std::uint64_t> dims_of(const Shape& s) { return {s.begin(), s.end()}; }

Shape shape_of(const std::vector<std::uint64_t>& d) { return {d.begin(), d.end()}; }

std::uint64_t meta_u64(const Container& c, const std::string& key) {
  const auto v = c.get_meta(key);
  if (!v) throw IoError("checkpoint is missing '" + key + "'");
  return std::stoull(*v);
}

void load_into(Tensor<float>& dst, const NamedArray& a) {
  if (a.dtype != DType::F32 || shape_of(a.shape) != dst.shape())
    throw IoError("checkpoint array '" + a.name + "' has shape " +
                  shape_to_string(shape_of(a.shape)) + ", expected " +
                  shape_to_string(dst.shape()));
  dst.storage() = a.as<float>();
}

}  // namespace

std::string format_metrics_log(const std::vector<EpochMetrics>& log) {
  std::string out = metrics_header() + "\n";
  for (const auto& m : log) out += format_metrics(m) + "\n";
  return out;
}

std::vector<EpochMetrics> parse_metrics_log(const std::string& text) {
  std::vector<EpochMetrics> log;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream f(line);
    EpochMetrics m;
    std::string err;
    f >> m.epoch >> m.lr >> m.wd >> m.train_loss >> err;
    if (!f && !f.eof()) throw IoError("malformed metrics line: " + line);
    m.test_error = std::stod(err);
    log.push_back(m);
  }
  return log;
}

Container Checkpoint::to_container() const {
  Container c;
  const auto& model = state.model;
  c.digest = model.config().digest();
  c.set_meta("kind", "checkpoint");
  c.set_meta("config", model.config().to_text());
  c.set_meta("hyper", hyper.to_text());
  c.set_meta("epoch", std::to_string(state.epoch));
  c.set_meta("seed.init", std::to_string(seeds.init));
  c.set_meta("seed.shuffle", std::to_string(seeds.shuffle));
  c.set_meta("seed.dropout", std::to_string(seeds.dropout));
  c.set_meta("prep.digest", std::to_string(prep_digest));
  c.set_meta("metrics", format_metrics_log(state.log));

  const auto names = model.param_names();
  const auto params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i)
    c.arrays.push_back(NamedArray::from<float>(names[i], DType::F32,
                                               dims_of(params[i]->shape()),
                                               params[i]->values()));
  for (std::size_t i = 0; i < state.sgd.velocity.size(); ++i)
    c.arrays.push_back(NamedArray::from<float>("momentum." + names[i], DType::F32,
                                               dims_of(state.sgd.velocity[i].shape()),
                                               state.sgd.velocity[i].values()));
  return c;
}

Checkpoint Checkpoint::from_container(const Container& c) {
  const auto config_text = c.get_meta("config");
  if (!config_text) throw IoError("container is not a checkpoint (no config)");
  const auto config = ModelConfig::parse(*config_text);
  if (config.digest() != c.digest)
    throw IoError("checkpoint config digest does not match its config text");

  Checkpoint ck{TrainState{Model<float>(config), {}, 0, {}}, {}, {}, 0};
  ck.hyper = HyperParams::parse(c.get_meta("hyper").value_or(""));
  ck.state.epoch = static_cast<int>(meta_u64(c, "epoch"));
  ck.seeds.init = meta_u64(c, "seed.init");
  ck.seeds.shuffle = meta_u64(c, "seed.shuffle");
  ck.seeds.dropout = meta_u64(c, "seed.dropout");
  ck.prep_digest = meta_u64(c, "prep.digest");
  ck.state.log = parse_metrics_log(c.get_meta("metrics").value_or(""));

  const auto names = ck.state.model.param_names();
  auto params = ck.state.model.params();
  ck.state.sgd = SgdState::zeros_like(ck.state.model);
  for (std::size_t i = 0; i < params.size(); ++i) {
    load_into(*params[i], c.array(names[i]));
    if (const auto* v = c.find("momentum." + names[i])) load_into(ck.state.sgd.velocity[i], *v);
  }
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const { to_container().save(path); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  return from_container(Container::load(path));
}

}  // namespace qhconv
