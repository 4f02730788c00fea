// qhconv: preprocessing, training, evaluation and analysis front end.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "qhconv/checkpoint.hpp"
#include "qhconv/dataset.hpp"
#include "qhconv/errors.hpp"
#include "qhconv/numeric.hpp"
#include "qhconv/occlusion.hpp"
#include "qhconv/rf_montecarlo.hpp"
#include "qhconv/saliency.hpp"
#include "qhconv/train.hpp"

#ifndef QHCONV_VERSION
#define QHCONV_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace qhconv;

namespace {

struct Common {
  fs::path out = "runs";
  fs::path data_root = "data/cifar-10-batches-bin";
  int threads = 1;
};

struct PreprocessArgs {
  std::string dataset = "cifar10";
  std::size_t train_size = 5000;
  std::size_t test_size = 2000;
  bool gcn = true;
  bool zca = true;
  double zca_eps = 1e-2;
  std::uint64_t seed_data = 1;
};

struct TrainArgs {
  std::string preset = "QH-A-mini";
  std::string name;
  int scale = 0;
  bool extra_dropout = false;
  std::uint64_t seed_pattern = 1;
  std::uint64_t seed_init = 1;
  std::uint64_t seed_shuffle = 2;
  std::uint64_t seed_dropout = 3;
  int epochs = 20;
  double lr = 5e-2;
  double momentum = 0.9;
  double wd = 1e-3;
  double wd_final = 1e-4;
  int warmup = 1;
  std::size_t batch_size = 128;
  fs::path train_cache;
  fs::path test_cache;
  fs::path resume;
  int stop_after = -1;
};

struct EvalArgs {
  fs::path checkpoint;
  fs::path data;
};

struct ParamsArgs {
  std::vector<std::string> presets{"BASE-A", "QH-A"};
  int scale = 0;
  std::uint64_t seed_pattern = 1;
};

struct RfArgs {
  std::vector<int> depths{3, 5, 7, 9};
  int configs = 5000;
  std::uint64_t seed = 1;
  int image_scale = 8;
};

struct SaliencyArgs {
  fs::path checkpoint;
  fs::path prep;
  fs::path raw;
  std::vector<std::size_t> images{0, 1, 2, 3};
  std::size_t omega = 5;
  int layer = -1;
  int cls = -1;
  double tau = 0.0;
};

struct OccludeArgs {
  std::vector<std::string> models;
  std::string generator;
  fs::path prep;
  fs::path raw;
  std::size_t max_images = 0;
  std::vector<int> top_k{1, 5};
  std::vector<double> fractions{0.01, 0.05, 0.10};
  std::vector<std::string> fills{"black", "motley"};
  int radius = 5;
  std::uint64_t seed = 1;
  bool save_sets = false;
  std::size_t control = 0;
};

fs::path or_default(const fs::path& p, const fs::path& dir, const char* name) {
  return p.empty() ? dir / name : p;
}

void require_file(const fs::path& p) {
  if (!fs::exists(p)) throw IoError("no such file: " + p.string());
}

// Resolved config plus enough provenance to replay the run.
void write_manifest(const CLI::App& app, const CLI::App& sub, const Common& c, int argc,
                    char** argv) {
  fs::create_directories(c.out);
  const std::string resolved = app.config_to_str(true, false);
  std::ofstream m(c.out / (sub.get_name() + ".manifest.ini"));
  if (!m) throw IoError("cannot write manifest in " + c.out.string());
  m << "# version " << QHCONV_VERSION << "\n# command";
  for (int i = 0; i < argc; ++i) m << ' ' << argv[i];
  const auto digest =
      fnv1a({reinterpret_cast<const std::uint8_t*>(resolved.data()), resolved.size()});
  m << "\n# config digest " << std::hex << digest << std::dec << '\n' << resolved;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream o(path);
  if (!o) throw IoError("cannot write " + path.string());
  o << text;
}

std::vector<fs::path> cifar_files(const fs::path& root, const std::string& dataset,
                                  bool train) {
  std::vector<fs::path> files;
  if (dataset == "cifar100") {
    files.push_back(root / (train ? "train.bin" : "test.bin"));
  } else if (train) {
    for (int b = 1; b <= 5; ++b) files.push_back(root / ("data_batch_" + std::to_string(b) + ".bin"));
  } else {
    files.push_back(root / "test_batch.bin");
  }
  for (const auto& f : files) require_file(f);
  return files;
}

int run_preprocess(const Common& c, const PreprocessArgs& a) {
  const auto kind = a.dataset == "cifar100" ? CifarKind::Cifar100 : CifarKind::Cifar10;
  Dataset train = load_cifar_binary(cifar_files(c.data_root, a.dataset, true), kind, "train");
  Dataset test = load_cifar_binary(cifar_files(c.data_root, a.dataset, false), kind, "test");
  if (a.train_size > 0) train = subsample(train, a.train_size, a.seed_data);
  if (a.test_size > 0) test = subsample(test, a.test_size, splitmix64(a.seed_data));

  const auto prep = fit_preprocessing(train, a.gcn, a.zca, a.zca_eps);
  save_dataset(test, c.out / "test_raw.qhc");
  prep.apply(train.images);
  prep.apply(test.images);
  save_dataset(train, c.out / "train.qhc", &prep);
  save_dataset(test, c.out / "test.qhc", &prep);
  prep.save(c.out / "prep.qhc");
  std::printf("train %zu images, test %zu images, gcn %d, zca %d (eps %g)\n", train.size(),
              test.size(), a.gcn ? 1 : 0, a.zca ? 1 : 0, a.zca_eps);
  std::printf("preprocessing digest %016llx -> %s\n",
              static_cast<unsigned long long>(prep.digest()), c.out.string().c_str());
  return 0;
}

int run_train(const Common& c, const TrainArgs& a) {
  const auto train_path = or_default(a.train_cache, c.out, "train.qhc");
  const auto test_path = or_default(a.test_cache, c.out, "test.qhc");
  require_file(train_path);
  std::uint64_t prep_digest = 0;
  const Dataset train_set = load_dataset(train_path, &prep_digest);
  std::optional<Dataset> test_set;
  if (fs::exists(test_path)) test_set = load_dataset(test_path);

  PresetOptions po;
  po.classes = train_set.class_count;
  po.scale = a.scale;
  po.pattern_seed = a.seed_pattern;
  po.extra_dropout = a.extra_dropout;
  const ModelConfig cfg = make_preset(a.preset, po);

  HyperParams h = HyperParams::scaled(a.epochs);
  h.lr = a.lr;
  h.momentum = a.momentum;
  h.weight_decay = a.wd;
  h.weight_decay_final = a.wd_final;
  h.batch_size = a.batch_size;
  h.warmup_epochs = a.warmup;
  const TrainSeeds seeds{a.seed_init, a.seed_shuffle, a.seed_dropout};

  const std::string name = a.name.empty() ? cfg.name : a.name;
  const auto ckpt_path = c.out / (name + ".ckpt");
  const auto log_path = c.out / (name + ".metrics.tsv");

  std::optional<Checkpoint> resumed;
  if (!a.resume.empty()) {
    require_file(a.resume);
    resumed = Checkpoint::load(a.resume);
    if (resumed->prep_digest != prep_digest)
      throw std::invalid_argument("resume checkpoint used different preprocessing");
  }

  std::printf("%s: %llu parameters, %zu training images\n", cfg.name.c_str(),
              static_cast<unsigned long long>(build_model<float>(cfg, 0).count_params()),
              train_set.size());
  std::printf("%s\n", metrics_header().c_str());
  TrainOptions opts;
  opts.threads = c.threads;
  opts.stop_after = a.stop_after;
  opts.on_epoch = [&](const TrainState& st) {
    std::printf("%s\n", format_metrics(st.log.back()).c_str());
    std::fflush(stdout);
    Checkpoint{st, h, seeds, prep_digest}.save(ckpt_path);
    write_text(log_path, format_metrics_log(st.log));
  };
  const auto st = train(cfg, train_set, test_set ? &*test_set : nullptr, h, seeds, opts,
                        resumed ? &resumed->state : nullptr);
  std::printf("checkpoint %s after %d epochs\n", ckpt_path.string().c_str(), st.epoch);
  return 0;
}

int run_eval(const Common& c, const EvalArgs& a) {
  require_file(a.checkpoint);
  const auto data_path = or_default(a.data, c.out, "test.qhc");
  require_file(data_path);
  const auto ck = Checkpoint::load(a.checkpoint);
  std::uint64_t digest = 0;
  const auto data = load_dataset(data_path, &digest);
  if (digest != ck.prep_digest)
    std::fprintf(stderr, "warning: data preprocessing differs from the training data\n");
  const double err = error_rate(ck.state.model, data, 500, c.threads);
  std::printf("%s\t%zu images\terror %.4f\n", ck.state.model.config().name.c_str(), data.size(),
              err);
  char line[256];
  std::snprintf(line, sizeof line, "model\tcheckpoint\timages\terror\n%s\t%s\t%zu\t%.6f\n",
                ck.state.model.config().name.c_str(), a.checkpoint.string().c_str(),
                data.size(), err);
  write_text(c.out / (a.checkpoint.stem().string() + ".eval.tsv"), line);
  return 0;
}

std::uint64_t conv3x3_weights(const ModelConfig& cfg) {
  std::uint64_t n = 0;
  for (const auto& l : cfg.layers)
    if (const auto* m = std::get_if<MaskedConvSpec>(&l))
      n += static_cast<std::uint64_t>(m->in_ch) * m->out_ch * m->mask.count();
  return n;
}

int run_params(const Common& c, const ParamsArgs& a) {
  std::ostringstream tsv;
  tsv << "preset\tparams\tmacs\tconv3x3_weights\n";
  std::vector<std::uint64_t> w3;
  for (const auto& p : a.presets) {
    PresetOptions po;
    po.scale = a.scale;
    po.pattern_seed = a.seed_pattern;
    const ModelConfig cfg = make_preset(p, po);
    const Model<float> m(cfg);
    const auto params = m.count_params();
    const auto macs = m.count_macs({3, 32, 32});
    w3.push_back(conv3x3_weights(cfg));
    tsv << cfg.name << '\t' << params << '\t' << macs << '\t' << w3.back() << '\n';
  }
  std::cout << tsv.str();
  for (std::size_t i = 1; i < w3.size(); ++i) {
    const auto g = std::gcd(w3[i], w3[0]);
    std::printf("conv3x3 weight ratio %s / %s = %llu/%llu\n", a.presets[i].c_str(),
                a.presets[0].c_str(), static_cast<unsigned long long>(w3[i] / g),
                static_cast<unsigned long long>(w3[0] / g));
  }
  write_text(c.out / "params.tsv", tsv.str());
  return 0;
}

int run_rfsim(const Common& c, const RfArgs& a) {
  std::ostringstream tsv;
  tsv << rf_record_header() << '\n';
  for (int d : a.depths) {
    const auto stats = simulate_rf(d, a.configs, a.seed, c.threads);
    tsv << format_rf_record(stats) << '\n';
    emit_coverage_image(stats, c.out / ("rf_mean_depth" + std::to_string(d) + ".png"),
                        a.image_scale);
    emit_coverage_image(stats.example_coverage,
                        c.out / ("rf_single_depth" + std::to_string(d) + ".png"), a.image_scale);
  }
  std::cout << tsv.str();
  write_text(c.out / "rfsim.tsv", tsv.str());
  return 0;
}

Tensor<float> single_image(const Dataset& d, std::size_t i) {
  Shape s = d.images.shape();
  s[0] = 1;
  const auto item = d.images.item(i);
  return Tensor<float>(s, std::vector<float>(item.begin(), item.end()));
}

int run_saliency(const Common& c, const SaliencyArgs& a) {
  require_file(a.checkpoint);
  const auto prep_path = or_default(a.prep, c.out, "prep.qhc");
  const auto raw_path = or_default(a.raw, c.out, "test_raw.qhc");
  require_file(prep_path);
  require_file(raw_path);
  const auto ck = Checkpoint::load(a.checkpoint);
  const auto prep = Preprocessing::load(prep_path);
  const Dataset raw = load_dataset(raw_path);
  const auto& model = ck.state.model;
  const std::size_t layer =
      a.layer < 0 ? last_maxpool_layer(model) : static_cast<std::size_t>(a.layer);

  std::ostringstream tsv;
  tsv << "image_id\tlabel\tclass\tpredicted\troi_pixels\tmax\n";
  for (std::size_t idx : a.images) {
    if (idx >= raw.size()) throw std::out_of_range("image index " + std::to_string(idx));
    auto x = single_image(raw, idx);
    prep.apply(x);
    const auto scores = model.forward(x, Mode::Eval);
    const auto top = top_classes({scores.data(), scores.size()});
    const int cls = a.cls >= 0 ? a.cls : raw.labels[idx];
    const auto sal = saliency_map(model, x, cls, layer, a.omega, c.threads);
    const auto region = roi(model, sal, a.tau);
    Shape chw = raw.images.shape();
    chw.erase(chw.begin());
    const auto item = raw.images.item(idx);
    const Tensor<float> img(chw, std::vector<float>(item.begin(), item.end()));
    render(img, sal, region, top, c.out / ("saliency_" + std::to_string(idx) + ".png"),
           raw.class_count);
    tsv << idx << '\t' << raw.labels[idx] << '\t' << cls << '\t' << top[0].id << '\t'
        << region.count() << '\t' << sal.map.max() << '\n';
  }
  std::cout << tsv.str();
  write_text(c.out / "saliency.tsv", tsv.str());
  return 0;
}

int run_occlude(const Common& c, const OccludeArgs& a) {
  const auto prep_path = or_default(a.prep, c.out, "prep.qhc");
  const auto raw_path = or_default(a.raw, c.out, "test_raw.qhc");
  require_file(prep_path);
  require_file(raw_path);
  const auto prep = Preprocessing::load(prep_path);
  const Dataset raw = load_dataset(raw_path);

  std::vector<Checkpoint> ckpts;
  std::vector<std::string> names;
  for (const auto& spec : a.models) {
    const auto eq = spec.find('=');
    const fs::path path = eq == std::string::npos ? spec : spec.substr(eq + 1);
    require_file(path);
    ckpts.push_back(Checkpoint::load(path));
    names.push_back(eq == std::string::npos ? ckpts.back().state.model.config().name
                                            : spec.substr(0, eq));
    if (ckpts.back().prep_digest != prep.digest())
      std::fprintf(stderr, "warning: %s was trained with different preprocessing\n",
                   names.back().c_str());
  }
  std::vector<NamedModel> models;
  for (std::size_t i = 0; i < ckpts.size(); ++i)
    models.push_back({names[i], &ckpts[i].state.model});
  const std::string gen_name = a.generator.empty() ? names.front() : a.generator;
  const auto gen = std::find_if(models.begin(), models.end(),
                                [&](const NamedModel& m) { return m.name == gen_name; });
  if (gen == models.end()) throw std::invalid_argument("unknown generator '" + gen_name + "'");

  OcclusionGrid grid;
  grid.top_k = a.top_k;
  grid.fractions = a.fractions;
  grid.fills.clear();
  for (const auto& f : a.fills) grid.fills.push_back(parse_fill(f));
  grid.radius = a.radius;
  grid.seed = a.seed;

  const auto sets =
      generate_occlusion_set(raw, prep, *gen, models, grid, a.max_images, c.threads);
  std::printf("%zu images classified correctly by all models\n", sets.front().items.size());
  if (a.save_sets) {
    const auto dir = c.out / "occluded";
    fs::create_directories(dir);
    for (std::size_t s = 0; s < sets.size(); ++s) sets[s].save(dir, "set" + std::to_string(s));
  }
  const auto table = evaluate_robustness(models, prep, sets, c.threads);
  std::cout << table.to_tsv();
  write_text(c.out / "robustness.tsv", table.to_tsv());

  if (a.control > 0) {
    OcclusionSpec spec;
    spec.generator = gen->name;
    spec.top_k = 5;
    spec.fraction = 0.05;
    spec.radius = a.radius;
    spec.seed = a.seed;
    const auto report =
        compare_with_random_control(*gen->model, prep, raw, spec, a.control, c.threads);
    write_text(c.out / "control.tsv", report.to_tsv());
    std::printf("targeted occlusion hurts more than random in %.1f%% of %zu images\n",
                100.0 * report.targeted_wins(), report.trials.size());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quasi-hexagonal kernel CNN toolkit", "qhconv"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI file with [subcommand] sections");
  bool print_config = false;
  app.add_flag("--print-config", print_config, "Print the resolved config and exit")
      ->configurable(false);

  Common c;
  app.add_option("--out", c.out, "Output directory")->envname("QHCONV_OUT")->capture_default_str();
  app.add_option("--data-root", c.data_root, "CIFAR binary batch directory")
      ->envname("QHCONV_DATA")
      ->capture_default_str();
  app.add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();

  PreprocessArgs pa;
  auto* pre = app.add_subcommand("preprocess", "Subsample, fit GCN/ZCA and cache datasets");
  pre->add_option("--dataset", pa.dataset)->check(CLI::IsMember({"cifar10", "cifar100"}))->capture_default_str();
  pre->add_option("--train-size", pa.train_size, "0 = all")->capture_default_str();
  pre->add_option("--test-size", pa.test_size, "0 = all")->capture_default_str();
  pre->add_option("--gcn", pa.gcn, "true/false")->capture_default_str();
  pre->add_option("--zca", pa.zca, "true/false")->capture_default_str();
  pre->add_option("--zca-eps", pa.zca_eps)->check(CLI::NonNegativeNumber)->capture_default_str();
  pre->add_option("--seed-data", pa.seed_data)->capture_default_str();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a preset on a cached dataset");
  tr->add_option("--preset", ta.preset)->capture_default_str();
  tr->add_option("--name", ta.name, "Output stem (default: model name)");
  tr->add_option("--scale", ta.scale, "Width divisor (0 = preset default)")->capture_default_str();
  tr->add_flag("--extra-dropout", ta.extra_dropout)->capture_default_str();
  tr->add_option("--seed-pattern", ta.seed_pattern)->capture_default_str();
  tr->add_option("--seed-init", ta.seed_init)->capture_default_str();
  tr->add_option("--seed-shuffle", ta.seed_shuffle)->capture_default_str();
  tr->add_option("--seed-dropout", ta.seed_dropout)->capture_default_str();
  tr->add_option("--epochs", ta.epochs)->check(CLI::PositiveNumber)->capture_default_str();
  tr->add_option("--lr", ta.lr)->capture_default_str();
  tr->add_option("--momentum", ta.momentum)->capture_default_str();
  tr->add_option("--wd", ta.wd)->capture_default_str();
  tr->add_option("--wd-final", ta.wd_final)->capture_default_str();
  tr->add_option("--warmup", ta.warmup, "Epochs of linear lr warmup")->capture_default_str();
  tr->add_option("--batch-size", ta.batch_size)->capture_default_str();
  tr->add_option("--train", ta.train_cache, "Default <out>/train.qhc");
  tr->add_option("--test", ta.test_cache, "Default <out>/test.qhc");
  tr->add_option("--resume", ta.resume, "Checkpoint to continue");
  tr->add_option("--stop-after", ta.stop_after, "Stop after this many epochs")->capture_default_str();

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Error rate of a checkpoint");
  ev->add_option("--checkpoint", ea.checkpoint)->required();
  ev->add_option("--data", ea.data, "Default <out>/test.qhc");

  ParamsArgs pr;
  auto* par = app.add_subcommand("params", "Parameter and MAC counts");
  par->add_option("--preset", pr.presets)->capture_default_str();
  par->add_option("--scale", pr.scale)->capture_default_str();
  par->add_option("--seed-pattern", pr.seed_pattern)->capture_default_str();

  RfArgs ra;
  auto* rf = app.add_subcommand("rfsim", "Receptive-field Monte Carlo");
  rf->add_option("--depths", ra.depths)->capture_default_str();
  rf->add_option("-K,--configs", ra.configs)->check(CLI::PositiveNumber)->capture_default_str();
  rf->add_option("--seed", ra.seed)->capture_default_str();
  rf->add_option("--image-scale", ra.image_scale)->check(CLI::PositiveNumber)->capture_default_str();

  SaliencyArgs sa;
  auto* sal = app.add_subcommand("saliency", "Render saliency maps for test images");
  sal->add_option("--checkpoint", sa.checkpoint)->required();
  sal->add_option("--prep", sa.prep, "Default <out>/prep.qhc");
  sal->add_option("--raw", sa.raw, "Default <out>/test_raw.qhc");
  sal->add_option("--images", sa.images)->capture_default_str();
  sal->add_option("--omega", sa.omega)->check(CLI::PositiveNumber)->capture_default_str();
  sal->add_option("--layer", sa.layer, "-1 = last max-pool")->capture_default_str();
  sal->add_option("--class", sa.cls, "-1 = true label")->capture_default_str();
  sal->add_option("--tau", sa.tau)->capture_default_str();

  OccludeArgs oa;
  auto* occ = app.add_subcommand("occlude", "Occlusion sets and robustness table");
  occ->add_option("--model", oa.models, "name=checkpoint, repeatable")->required();
  occ->add_option("--generator", oa.generator, "Model that supplies saliency (default: first)");
  occ->add_option("--prep", oa.prep, "Default <out>/prep.qhc");
  occ->add_option("--raw", oa.raw, "Default <out>/test_raw.qhc");
  occ->add_option("--max-images", oa.max_images, "0 = all")->capture_default_str();
  occ->add_option("--top-k", oa.top_k)->capture_default_str();
  occ->add_option("--fractions", oa.fractions)->capture_default_str();
  occ->add_option("--fills", oa.fills)->capture_default_str();
  occ->add_option("--radius", oa.radius)->check(CLI::PositiveNumber)->capture_default_str();
  occ->add_option("--seed", oa.seed)->capture_default_str();
  occ->add_flag("--save-sets", oa.save_sets)->capture_default_str();
  occ->add_option("--control", oa.control, "Random-control comparison on N images")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  if (print_config) {
    std::cout << app.config_to_str(true, false);
    return 0;
  }

  const CLI::App* sub = app.get_subcommands().front();
  try {
    write_manifest(app, *sub, c, argc, argv);
    if (sub == pre) return run_preprocess(c, pa);
    if (sub == tr) return run_train(c, ta);
    if (sub == ev) return run_eval(c, ea);
    if (sub == par) return run_params(c, pr);
    if (sub == rf) return run_rfsim(c, ra);
    if (sub == sal) return run_saliency(c, sa);
    return run_occlude(c, oa);
  } catch (const EngineFault& e) {
    std::fprintf(stderr, "engine fault: %s\n", e.what());
    return 3;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
