#include "qhconv/occlusion.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "qhconv/errors.hpp"
#include "qhconv/numeric.hpp"
#include "qhconv/train.hpp"

namespace qhconv {

namespace {

bool spaced(const std::vector<Pixel>& kept, const Pixel& p, int radius) {
  for (const auto& q : kept) {
    const int dy = p.y - q.y, dx = p.x - q.x;
    if (dy * dy + dx * dx < radius * radius) return false;
  }
  return true;
}

Tensor<float> single(const Dataset& d, std::size_t i) {
  Shape s = d.images.shape();
  s[0] = 1;
  const auto item = d.images.item(i);
  return Tensor<float>(s, std::vector<float>(item.begin(), item.end()));
}

Dataset preprocessed(const Dataset& raw, const Preprocessing& prep) {
  Dataset d = raw;
  prep.apply(d.images);
  return d;
}

}  // namespace

std::string fill_name(Fill f) { return f == Fill::Black ? "Bla." : "Mot."; }

Fill parse_fill(const std::string& s) {
  if (s == "Bla." || s == "black" || s == "BLACK") return Fill::Black;
  if (s == "Mot." || s == "motley" || s == "MOTLEY") return Fill::Motley;
  throw std::invalid_argument("unknown fill '" + s + "' (black or motley)");
}

void OcclusionSpec::validate() const {
  if (top_k < 1) throw std::invalid_argument("top_k must be >= 1");
  if (!(fraction >= 0.01 && fraction <= 0.10))
    throw std::invalid_argument("pixel fraction must be in [0.01, 0.10]");
  if (radius < 1) throw std::invalid_argument("radius must be >= 1");
}

std::string OcclusionSpec::label() const {
  char pct[32];
  std::snprintf(pct, sizeof pct, "%g%%", fraction * 100.0);
  return generator + "/Top" + std::to_string(top_k) + "/" + fill_name(fill) + "/" + pct;
}

std::uint64_t OcclusionSpec::digest() const {
  std::ostringstream o;
  o.precision(17);
  o << generator << '|' << top_k << '|' << fraction << '|' << radius << '|'
    << static_cast<int>(fill) << '|' << seed;
  const auto s = o.str();
  return fnv1a({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

std::string OccludedSet::manifest() const {
  std::ostringstream o;
  char hex[8];
  o << "image_id\tcenters\tcolors\tspec_digest\n";
  for (const auto& item : items) {
    o << item.index << '\t';
    for (std::size_t k = 0; k < item.occluders.size(); ++k)
      o << (k ? ";" : "") << item.occluders[k].center.y << ',' << item.occluders[k].center.x;
    o << '\t';
    for (std::size_t k = 0; k < item.occluders.size(); ++k) {
      const auto& c = item.occluders[k].color;
      std::snprintf(hex, sizeof hex, "%02x%02x%02x", c[0], c[1], c[2]);
      o << (k ? ";" : "") << '#' << hex;
    }
    o << '\t' << spec.digest() << '\n';
  }
  return o.str();
}

void OccludedSet::save(const std::filesystem::path& dir, const std::string& stem) const {
  save_dataset(images, dir / (stem + ".qhc"));
  std::ofstream out(dir / (stem + ".manifest.tsv"));
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << "# " << spec.label() << '\n' << manifest();
}

std::vector<Pixel> select_occlusion_pixels(const PixelMap& map, const Roi& roi,
                                           double fraction, int radius) {
  if (roi.empty()) throw std::invalid_argument("select_occlusion_pixels: empty ROI");
  if (roi.height != map.height || roi.width != map.width)
    throw std::invalid_argument("select_occlusion_pixels: ROI and map sizes differ");
  std::vector<Pixel> cand;
  for (std::size_t y = 0; y < roi.height; ++y)
    for (std::size_t x = 0; x < roi.width; ++x)
      if (roi.contains(y, x)) cand.push_back({static_cast<int>(y), static_cast<int>(x)});
  std::stable_sort(cand.begin(), cand.end(), [&](const Pixel& a, const Pixel& b) {
    return map.at(a.y, a.x) > map.at(b.y, b.x);
  });
  const auto take = std::min<std::size_t>(
      cand.size(),
      static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(cand.size()) - 1e-9)));
  std::vector<Pixel> kept;
  for (std::size_t i = 0; i < take; ++i)
    if (spaced(kept, cand[i], radius)) kept.push_back(cand[i]);
  return kept;
}

std::vector<Pixel> random_control_pixels(const Roi& roi, std::size_t count, int radius,
                                         std::uint64_t seed,
                                         const std::vector<Pixel>& avoid) {
  const std::size_t n = roi.height * roi.width;
  const auto order = permutation(n, seed);
  std::vector<Pixel> kept;
  for (std::size_t p : order) {
    if (kept.size() == count) return kept;
    const Pixel px{static_cast<int>(p / roi.width), static_cast<int>(p % roi.width)};
    if (!roi.mask[p] && spaced(kept, px, radius)) kept.push_back(px);
  }
  // Too little room outside the ROI: keep clear of the targeted discs instead.
  for (std::size_t p : order) {
    if (kept.size() == count) break;
    const Pixel px{static_cast<int>(p / roi.width), static_cast<int>(p % roi.width)};
    if (!roi.mask[p]) continue;
    bool clear = true;
    for (const auto& a : avoid) {
      const int dy = px.y - a.y, dx = px.x - a.x;
      clear = clear && dy * dy + dx * dx > radius * radius;
    }
    if (clear && spaced(kept, px, radius)) kept.push_back(px);
  }
  return kept;
}

std::vector<Occluder> make_occluders(const std::vector<Pixel>& centers,
                                     const OcclusionSpec& spec, std::size_t image_index) {
  std::vector<Occluder> out;
  for (std::size_t k = 0; k < centers.size(); ++k) {
    Occluder o{centers[k], {0, 0, 0}};
    if (spec.fill == Fill::Motley) {
      const std::uint64_t h =
          splitmix64(spec.seed ^ splitmix64((static_cast<std::uint64_t>(image_index) << 20) + k));
      o.color = {static_cast<std::uint8_t>(h >> 16), static_cast<std::uint8_t>(h >> 8),
                 static_cast<std::uint8_t>(h)};
    }
    out.push_back(o);
  }
  return out;
}

void apply_occluders(std::span<float> image, std::size_t height, std::size_t width,
                     const std::vector<Occluder>& occluders, int radius) {
  const std::size_t plane = height * width;
  if (plane == 0 || image.size() % plane != 0)
    throw std::invalid_argument("apply_occluders: image size does not match H x W");
  const std::size_t channels = image.size() / plane;
  for (const auto& o : occluders)
    for (int dy = -radius; dy <= radius; ++dy)
      for (int dx = -radius; dx <= radius; ++dx) {
        if (dy * dy + dx * dx > radius * radius) continue;
        const int y = o.center.y + dy, x = o.center.x + dx;
        if (y < 0 || x < 0 || y >= static_cast<int>(height) || x >= static_cast<int>(width))
          continue;
        for (std::size_t c = 0; c < channels; ++c)
          image[c * plane + static_cast<std::size_t>(y) * width + x] =
              static_cast<float>(o.color[c % 3]) / 255.0f;
      }
}

std::vector<std::size_t> correctly_classified(const std::vector<NamedModel>& models,
                                              const Dataset& data, int threads) {
  std::vector<std::uint8_t> ok(data.size(), 1);
  for (const auto& m : models) {
    const auto pred = predict_labels(*m.model, data.images, 500, threads);
    for (std::size_t i = 0; i < pred.size(); ++i) ok[i] &= pred[i] == data.labels[i];
  }
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < ok.size(); ++i)
    if (ok[i]) idx.push_back(i);
  return idx;
}

std::vector<OccludedSet> generate_occlusion_set(const Dataset& raw,
                                                const Preprocessing& prep,
                                                const NamedModel& generator,
                                                const std::vector<NamedModel>& models,
                                                const OcclusionGrid& grid,
                                                std::size_t max_images, int threads) {
  const Dataset pre = preprocessed(raw, prep);
  auto idx = correctly_classified(models, pre, threads);
  if (idx.empty())
    throw std::invalid_argument("no image is classified correctly by every model");
  if (max_images > 0 && idx.size() > max_images) idx.resize(max_images);

  const Model<float>& gen = *generator.model;
  const std::size_t layer = last_maxpool_layer(gen);
  const std::size_t H = raw.images.dim(2), W = raw.images.dim(3);

  // centers[i][k][f] for image i, top_k k, fraction f
  std::vector<std::vector<std::vector<std::vector<Pixel>>>> centers(idx.size());
  parallel_for(idx.size(), threads, [&](std::size_t i) {
    const auto image = single(pre, idx[i]);
    const auto scores = unit_scores(gen, image, layer, pre.labels[idx[i]]);
    centers[i].resize(grid.top_k.size());
    for (std::size_t k = 0; k < grid.top_k.size(); ++k) {
      const auto sal = saliency_map(gen, image, scores, static_cast<std::size_t>(grid.top_k[k]));
      const auto region = roi(gen, sal);
      for (double f : grid.fractions)
        centers[i][k].push_back(region.empty()
                                    ? std::vector<Pixel>{}
                                    : select_occlusion_pixels(sal.map, region, f, grid.radius));
    }
  });

  std::vector<OccludedSet> sets;
  for (std::size_t k = 0; k < grid.top_k.size(); ++k)
    for (Fill fill : grid.fills)
      for (std::size_t f = 0; f < grid.fractions.size(); ++f) {
        OccludedSet set;
        set.spec = {generator.name, grid.top_k[k], grid.fractions[f], grid.radius, fill,
                    grid.seed};
        set.spec.validate();
        set.images = raw.subset(idx);
        for (std::size_t i = 0; i < idx.size(); ++i) {
          OccludedImage item{idx[i], make_occluders(centers[i][k][f], set.spec, idx[i])};
          apply_occluders(set.images.images.item(i), H, W, item.occluders, grid.radius);
          set.items.push_back(std::move(item));
        }
        sets.push_back(std::move(set));
      }
  return sets;
}

double RobustnessTable::average(std::size_t model) const {
  const auto& row = accuracy.at(model);
  if (row.empty()) return 0.0;
  return stable_sum(row) / static_cast<double>(row.size());
}

std::string RobustnessTable::to_tsv() const {
  std::ostringstream o;
  o << "model";
  for (const auto& s : sets) o << '\t' << s;
  o << "\tavg\n";
  char buf[32];
  for (std::size_t m = 0; m < models.size(); ++m) {
    o << models[m];
    for (double a : accuracy[m]) {
      std::snprintf(buf, sizeof buf, "%.2f", 100.0 * a);
      o << '\t' << buf;
    }
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * average(m));
    o << '\t' << buf << '\n';
  }
  return o.str();
}

RobustnessTable evaluate_robustness(const std::vector<NamedModel>& models,
                                    const Preprocessing& prep,
                                    const std::vector<OccludedSet>& sets, int threads) {
  RobustnessTable t;
  for (const auto& m : models) t.models.push_back(m.name);
  for (const auto& s : sets) t.sets.push_back(s.spec.label());
  t.accuracy.assign(models.size(), std::vector<double>(sets.size(), 0.0));
  for (std::size_t s = 0; s < sets.size(); ++s) {
    const Dataset pre = preprocessed(sets[s].images, prep);
    for (std::size_t m = 0; m < models.size(); ++m)
      t.accuracy[m][s] = 1.0 - error_rate(*models[m].model, pre, 500, threads);
  }
  return t;
}

double ControlReport::targeted_wins() const {
  if (trials.empty()) return 0.0;
  std::size_t wins = 0;
  for (const auto& t : trials) wins += t.p_targeted < t.p_random;
  return static_cast<double>(wins) / static_cast<double>(trials.size());
}

std::string ControlReport::to_tsv() const {
  std::ostringstream o;
  o.precision(6);
  o << "image_id\tdiscs\tp_clean\tp_targeted\tp_random\tfallback\n";
  for (const auto& t : trials)
    o << t.index << '\t' << t.discs << '\t' << t.p_clean << '\t' << t.p_targeted << '\t'
      << t.p_random << '\t' << (t.fallback ? 1 : 0) << '\n';
  return o.str();
}

ControlReport compare_with_random_control(const Model<float>& model,
                                          const Preprocessing& prep, const Dataset& raw,
                                          const OcclusionSpec& spec, std::size_t n_images,
                                          int threads) {
  spec.validate();
  const Dataset pre = preprocessed(raw, prep);
  auto idx = correctly_classified({{"model", &model}}, pre, threads);
  if (idx.empty()) throw std::invalid_argument("no correctly classified image");
  if (idx.size() > n_images) idx.resize(n_images);

  const std::size_t layer = last_maxpool_layer(model);
  const std::size_t H = raw.images.dim(2), W = raw.images.dim(3);
  ControlReport report;
  report.trials.resize(idx.size());
  Dataset targeted = raw.subset(idx), control = targeted;

  parallel_for(idx.size(), threads, [&](std::size_t i) {
    const auto image = single(pre, idx[i]);
    const int label = pre.labels[idx[i]];
    const auto sal = saliency_map(model, image, label, layer,
                                  static_cast<std::size_t>(spec.top_k));
    const auto region = roi(model, sal);
    auto& t = report.trials[i];
    t.index = idx[i];
    if (region.empty()) return;
    const auto hit = select_occlusion_pixels(sal.map, region, spec.fraction, spec.radius);
    const auto ctl = random_control_pixels(region, hit.size(), spec.radius,
                                           splitmix64(spec.seed ^ idx[i]), hit);
    t.discs = hit.size();
    for (const auto& p : ctl) t.fallback = t.fallback || region.contains(p.y, p.x);
    apply_occluders(targeted.images.item(i), H, W, make_occluders(hit, spec, idx[i]),
                    spec.radius);
    apply_occluders(control.images.item(i), H, W, make_occluders(ctl, spec, idx[i]),
                    spec.radius);
  });

  auto prob = [&](const Dataset& d) {
    const auto p = softmax(predict_scores(model, preprocessed(d, prep).images, 500, threads));
    const std::size_t c = p.dim(1);
    std::vector<double> out(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) out[i] = p[i * c + d.labels[i]];
    return out;
  };
  const auto clean = prob(raw.subset(idx)), hit = prob(targeted), ctl = prob(control);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    report.trials[i].p_clean = clean[i];
    report.trials[i].p_targeted = hit[i];
    report.trials[i].p_random = ctl[i];
  }
  return report;
}

}  // namespace qhconv
