#include "lupi/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "lupi/checkpoint.hpp"

namespace lupi {

TripletDataset TripletDataset::subset(const std::vector<std::size_t>& indices) const {
  TripletDataset out;
  std::size_t d = dim();
  out.x = Tensor({indices.size(), d});
  out.xstar = Tensor({indices.size(), d});
  out.masks = Tensor({indices.size(), d});
  out.num_classes = num_classes;
  out.meta = meta;
  out.seed = seed;
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::size_t i = indices[r];
    std::copy_n(x.data() + i * d, d, out.x.data() + r * d);
    std::copy_n(xstar.data() + i * d, d, out.xstar.data() + r * d);
    std::copy_n(masks.data() + i * d, d, out.masks.data() + r * d);
    out.y.push_back(y[i]);
    out.has_star.push_back(has_star[i]);
  }
  return out;
}

namespace {

// distinct cells of the inner (jitter-padded) box
std::vector<std::size_t> sample_cells(std::size_t count, std::size_t side, int pad,
                                      RngState& rng) {
  std::size_t inner = side - 2 * static_cast<std::size_t>(pad);
  std::vector<std::size_t> pool(inner * inner);
  std::iota(pool.begin(), pool.end(), 0);
  // partial Fisher-Yates
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t j = i + rng.below(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  std::vector<std::size_t> cells(pool.begin(), pool.begin() + count);
  for (std::size_t& c : cells) {
    std::size_t r = c / inner, col = c % inner;
    c = (r + pad) * side + (col + pad);
  }
  return cells;
}

struct Prototype {
  std::vector<std::size_t> cells;  // jitter-safe positions
  std::vector<double> values;
};

Prototype build_prototype(const GenConfig& cfg, std::uint64_t seed, std::size_t cls) {
  std::size_t inner = cfg.grid_side > 2 * static_cast<std::size_t>(cfg.jitter)
                          ? cfg.grid_side - 2 * cfg.jitter
                          : 0;
  if (cfg.proto_support > inner * inner) {
    throw std::invalid_argument("generate: prototype support " +
                                std::to_string(cfg.proto_support) +
                                " does not fit the jitter-padded grid");
  }
  RngState rng = RngState(seed).substream(0x9701 + cls);
  Prototype p;
  p.cells = sample_cells(cfg.proto_support, cfg.grid_side, cfg.jitter, rng);
  for (std::size_t i = 0; i < cfg.proto_support; ++i)
    p.values.push_back(rng.uniform(cfg.proto_lo, cfg.proto_hi));
  return p;
}

template <typename F>
void shuffled_indices(std::size_t n, RngState& rng, F&& emit) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  emit(idx);
}

}  // namespace

Tensor class_prototype(const GenConfig& config, std::uint64_t seed, std::size_t cls) {
  Prototype p = build_prototype(config, seed, cls);
  Tensor t({config.dim()});
  for (std::size_t i = 0; i < p.cells.size(); ++i) t[p.cells[i]] = p.values[i];
  return t;
}

TripletDataset generate(const GenConfig& config, std::size_t n, double xstar_fraction,
                        std::uint64_t seed) {
  if (xstar_fraction < 0.0 || xstar_fraction > 1.0)
    throw std::invalid_argument("generate: xstar_fraction must be in [0,1]");
  if (n < config.num_classes)
    throw std::invalid_argument("generate: n must be >= num_classes");

  std::vector<Prototype> protos;
  for (std::size_t c = 0; c < config.num_classes; ++c)
    protos.push_back(build_prototype(config, seed, c));

  std::size_t d = config.dim();
  std::size_t side = config.grid_side;
  TripletDataset ds;
  ds.x = Tensor({n, d});
  ds.xstar = Tensor({n, d});
  ds.masks = Tensor({n, d});
  ds.y.resize(n);
  ds.has_star.assign(n, 0);
  ds.num_classes = config.num_classes;
  ds.meta = config;
  ds.seed = seed;

  RngState base(seed);
  for (std::size_t i = 0; i < n; ++i) {
    RngState rng = base.substream(1000 + i);
    std::size_t cls = rng.below(config.num_classes);
    ds.y[i] = static_cast<int>(cls);
    double* xr = ds.x.data() + i * d;
    double* mr = ds.masks.data() + i * d;

    int dr = static_cast<int>(rng.below(2 * config.jitter + 1)) - config.jitter;
    int dc = static_cast<int>(rng.below(2 * config.jitter + 1)) - config.jitter;
    const Prototype& p = protos[cls];
    for (std::size_t k = 0; k < p.cells.size(); ++k) {
      long pos = static_cast<long>(p.cells[k]) + dr * static_cast<long>(side) + dc;
      xr[pos] = p.values[k];
      mr[pos] = 1.0;
    }

    // distractor fragments from other classes
    for (std::size_t f = 0; f < config.distractors; ++f) {
      std::size_t other = rng.below(config.num_classes - 1);
      if (other >= cls) ++other;
      const Prototype& q = protos[other];
      int fr = static_cast<int>(rng.below(2 * config.jitter + 1)) - config.jitter;
      int fc = static_cast<int>(rng.below(2 * config.jitter + 1)) - config.jitter;
      for (std::size_t k = 0; k < config.fragment_cells && k < q.cells.size(); ++k) {
        std::size_t pick = rng.below(q.cells.size());
        long pos = static_cast<long>(q.cells[pick]) + fr * static_cast<long>(side) + fc;
        if (pos < 0 || pos >= static_cast<long>(d)) continue;
        xr[pos] += q.values[pick];
      }
    }

    if (config.noise_std > 0.0) {
      for (std::size_t j = 0; j < d; ++j) xr[j] += config.noise_std * rng.normal();
    }
    for (std::size_t j = 0; j < d; ++j)
      xr[j] = std::clamp(xr[j], 0.0, config.clip_hi);

    double* sr = ds.xstar.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) sr[j] = xr[j] * mr[j];
  }

  std::size_t m = static_cast<std::size_t>(std::floor(xstar_fraction * n));
  RngState prng = base.substream(0xfadefade);
  shuffled_indices(n, prng, [&](const std::vector<std::size_t>& idx) {
    for (std::size_t k = 0; k < m; ++k) ds.has_star[idx[k]] = 1;
  });
  // absent records carry no privileged view
  for (std::size_t i = 0; i < n; ++i) {
    if (!ds.has_star[i])
      std::fill_n(ds.xstar.data() + i * d, d, 0.0);
  }
  return ds;
}

namespace {

std::uint32_t read_be32(std::istream& f, const std::string& path) {
  std::uint8_t b[4];
  if (!f.read(reinterpret_cast<char*>(b), 4))
    throw IdxError(IdxErrorKind::kTruncated, "truncated IDX header in " + path);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | b[3];
}

}  // namespace

TripletDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream fi(images_path, std::ios::binary);
  if (!fi) throw IdxError(IdxErrorKind::kTruncated, "cannot open " + images_path);
  std::uint32_t magic = read_be32(fi, images_path);
  if (magic != 0x00000803) {
    throw IdxError(IdxErrorKind::kWrongMagic,
                   "wrong magic in " + images_path + ": expected 0x00000803");
  }
  std::uint32_t n = read_be32(fi, images_path);
  std::uint32_t rows = read_be32(fi, images_path);
  std::uint32_t cols = read_be32(fi, images_path);
  std::size_t d = static_cast<std::size_t>(rows) * cols;
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(n) * d);
  if (!pixels.empty() &&
      !fi.read(reinterpret_cast<char*>(pixels.data()),
               static_cast<std::streamsize>(pixels.size()))) {
    throw IdxError(IdxErrorKind::kTruncated, "truncated pixel payload in " + images_path);
  }

  std::ifstream fl(labels_path, std::ios::binary);
  if (!fl) throw IdxError(IdxErrorKind::kTruncated, "cannot open " + labels_path);
  std::uint32_t lmagic = read_be32(fl, labels_path);
  if (lmagic != 0x00000801) {
    throw IdxError(IdxErrorKind::kWrongMagic,
                   "wrong magic in " + labels_path + ": expected 0x00000801");
  }
  std::uint32_t ln = read_be32(fl, labels_path);
  if (ln != n) {
    throw IdxError(IdxErrorKind::kCountMismatch,
                   "record count mismatch: " + std::to_string(n) + " images vs " +
                       std::to_string(ln) + " labels");
  }
  std::vector<std::uint8_t> labels(ln);
  if (!labels.empty() &&
      !fl.read(reinterpret_cast<char*>(labels.data()),
               static_cast<std::streamsize>(labels.size()))) {
    throw IdxError(IdxErrorKind::kTruncated, "truncated label payload in " + labels_path);
  }

  TripletDataset ds;
  if (n == 0) return ds;  // zero-record file: empty dataset, no error
  ds.x = Tensor({n, d});
  for (std::size_t i = 0; i < pixels.size(); ++i)
    ds.x[i] = static_cast<double>(pixels[i]) / 255.0;
  ds.xstar = Tensor(ds.x.shape());
  ds.masks = Tensor(ds.x.shape());
  ds.y.resize(n);
  int maxlabel = 0;
  for (std::size_t i = 0; i < ln; ++i) {
    ds.y[i] = labels[i];
    maxlabel = std::max(maxlabel, ds.y[i]);
  }
  ds.has_star.assign(n, 0);
  ds.num_classes = n > 0 ? static_cast<std::size_t>(maxlabel) + 1 : 0;
  return ds;
}

std::array<TripletDataset, 3> split(const TripletDataset& dataset,
                                    const std::array<double, 3>& fractions,
                                    std::uint64_t seed) {
  double total = fractions[0] + fractions[1] + fractions[2];
  for (double f : fractions)
    if (f < 0.0) throw std::invalid_argument("split: negative fraction");
  if (std::fabs(total - 1.0) > 1e-9)
    throw std::invalid_argument("split: fractions must sum to 1");

  // per-class seeded shuffle, then proportional contiguous cuts
  std::vector<std::vector<std::size_t>> by_class(
      std::max<std::size_t>(dataset.num_classes, 1));
  for (std::size_t i = 0; i < dataset.size(); ++i)
    by_class[static_cast<std::size_t>(dataset.y[i])].push_back(i);

  RngState rng(seed ^ 0x5157ee71);
  std::array<std::vector<std::size_t>, 3> parts;
  for (auto& cls : by_class) {
    for (std::size_t i = cls.size(); i > 1; --i)
      std::swap(cls[i - 1], cls[rng.below(i)]);
    std::size_t c1 = static_cast<std::size_t>(std::llround(fractions[0] * cls.size()));
    std::size_t c2 = c1 + static_cast<std::size_t>(
                              std::llround(fractions[1] * cls.size()));
    c2 = std::min(c2, cls.size());
    for (std::size_t i = 0; i < cls.size(); ++i)
      parts[i < c1 ? 0 : (i < c2 ? 1 : 2)].push_back(cls[i]);
  }
  std::array<TripletDataset, 3> out;
  for (int s = 0; s < 3; ++s) {
    if (fractions[s] > 0.0 && parts[s].empty())
      throw std::invalid_argument("split: fraction " + std::to_string(fractions[s]) +
                                  " yields an empty split");
    auto& idx = parts[s];
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[rng.below(i)]);
    if (!idx.empty()) out[s] = dataset.subset(idx);
  }
  return out;
}

namespace {

nlohmann::json tensor_to_json(const Tensor& t) {
  nlohmann::json j;
  j["shape"] = t.shape();
  j["data"] = base64_encode(reinterpret_cast<const std::uint8_t*>(t.data()),
                            t.size() * sizeof(double));
  return j;
}

Tensor tensor_from_json(const nlohmann::json& j) {
  std::vector<std::size_t> shape = j.at("shape").get<std::vector<std::size_t>>();
  auto bytes = base64_decode(j.at("data").get<std::string>());
  std::vector<double> data(bytes.size() / sizeof(double));
  std::memcpy(data.data(), bytes.data(), bytes.size());
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

void save_dataset(const TripletDataset& ds, const std::string& path) {
  nlohmann::json doc;
  doc["format_version"] = 1;
  doc["meta"] = {{"num_classes", ds.num_classes},
                 {"grid_side", ds.meta.grid_side},
                 {"proto_support", ds.meta.proto_support},
                 {"distractors", ds.meta.distractors},
                 {"fragment_cells", ds.meta.fragment_cells},
                 {"noise_std", ds.meta.noise_std},
                 {"jitter", ds.meta.jitter},
                 {"seed", ds.seed}};
  doc["x"] = tensor_to_json(ds.x);
  doc["xstar"] = tensor_to_json(ds.xstar);
  doc["masks"] = tensor_to_json(ds.masks);
  doc["y"] = ds.y;
  doc["has_star"] = ds.has_star;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open dataset file for writing: " + path);
  f << doc.dump();
}

TripletDataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open dataset file: " + path);
  nlohmann::json doc;
  f >> doc;
  TripletDataset ds;
  const auto& meta = doc.at("meta");
  ds.num_classes = meta.at("num_classes").get<std::size_t>();
  ds.meta.grid_side = meta.value("grid_side", std::size_t{16});
  ds.meta.num_classes = ds.num_classes;
  ds.meta.proto_support = meta.value("proto_support", std::size_t{24});
  ds.meta.distractors = meta.value("distractors", std::size_t{3});
  ds.meta.fragment_cells = meta.value("fragment_cells", std::size_t{8});
  ds.meta.noise_std = meta.value("noise_std", 0.1);
  ds.meta.jitter = meta.value("jitter", 2);
  ds.seed = meta.value("seed", std::uint64_t{0});
  ds.x = tensor_from_json(doc.at("x"));
  ds.xstar = tensor_from_json(doc.at("xstar"));
  ds.masks = tensor_from_json(doc.at("masks"));
  ds.y = doc.at("y").get<std::vector<int>>();
  ds.has_star = doc.at("has_star").get<std::vector<std::uint8_t>>();
  return ds;
}

}  // namespace lupi
