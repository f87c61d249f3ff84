// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0

#include "refseg/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "refseg/random.hpp"

namespace refseg {
namespace {

constexpr int kMaxSceneAttempts = 64;
constexpr int kMaxPlacementTries = 200;
constexpr double kGap = 2.0;

constexpr std::array<std::array<int, 3>, kColors> kPalette = {{
    {220, 40, 40},   // red
    {40, 180, 60},   // green
    {50, 80, 220},   // blue
    {230, 210, 40},  // yellow
    {150, 60, 190},  // purple
}};

double unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }
std::size_t pick(Rng& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

std::uint8_t clamp_byte(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

bool overlaps(const ShapeInstance& a, const ShapeInstance& b) {
  return !(a.right() + kGap < b.left() || b.right() + kGap < a.left() || a.bottom() + kGap < b.top() ||
           b.bottom() + kGap < a.top());
}

std::optional<std::vector<ShapeInstance>> place_scene(Rng& rng, std::size_t height, std::size_t width) {
  const double h = static_cast<double>(height), w = static_cast<double>(width);
  const double unit_len = w / 64.0;
  const std::size_t count = 2 + pick(rng, 3);
  std::vector<ShapeInstance> shapes;
  std::vector<std::array<std::size_t, 3>> used;
  while (shapes.size() < count) {
    ShapeInstance s;
    s.kind = static_cast<ShapeKind>(pick(rng, kShapeKinds));
    s.color = static_cast<Color>(pick(rng, kColors));
    s.size = static_cast<SizeClass>(pick(rng, 2));
    const std::array<std::size_t, 3> key = {static_cast<std::size_t>(s.kind), static_cast<std::size_t>(s.color),
                                            static_cast<std::size_t>(s.size)};
    if (std::find(used.begin(), used.end(), key) != used.end()) continue;
    s.r = s.size == SizeClass::Small ? uniform(rng, 4.0, 6.0) * unit_len : uniform(rng, 9.0, 12.0) * unit_len;
    bool placed = false;
    for (int t = 0; t < kMaxPlacementTries && !placed; ++t) {
      s.cx = uniform(rng, s.r + 1.0, w - s.r - 1.0);
      s.cy = uniform(rng, s.r + 1.0, h - s.r - 1.0);
      if (std::abs(s.cx - w / 2.0) < kGap) continue;
      placed = std::none_of(shapes.begin(), shapes.end(), [&](const auto& o) { return overlaps(s, o); });
    }
    if (!placed) return std::nullopt;
    shapes.push_back(s);
    used.push_back(key);
  }
  return shapes;
}

std::size_t word_count(const std::string& text) {
  std::istringstream is(text);
  return static_cast<std::size_t>(std::distance(std::istream_iterator<std::string>(is), {}));
}

std::size_t bucket_of(std::size_t tokens) {
  for (std::size_t b = 0; b + 1 < kLengthBucketEdges.size(); ++b) {
    if (tokens >= kLengthBucketEdges[b] && tokens < kLengthBucketEdges[b + 1]) return b;
  }
  return kLengthBucketEdges.size() - 2;
}

std::vector<Description> candidate_descriptions(const std::vector<ShapeInstance>& shapes, std::size_t target,
                                                std::size_t width) {
  const auto& s = shapes[target];
  std::vector<std::optional<std::pair<Relation, Reference>>> relations = {std::nullopt};
  for (std::size_t o = 0; o < shapes.size(); ++o) {
    if (o == target) continue;
    for (auto rel : {Relation::Above, Relation::Below, Relation::LeftOf, Relation::RightOf}) {
      if (!related(s, rel, shapes[o])) continue;
      const auto& t = shapes[o];
      for (const Reference& ref : {Reference{std::nullopt, std::nullopt, t.kind}, Reference{std::nullopt, t.color, t.kind},
                                   Reference{t.size, std::nullopt, t.kind}}) {
        relations.emplace_back(std::make_pair(rel, ref));
      }
    }
  }
  std::vector<Description> out;
  for (bool article : {false, true}) {
    for (bool use_size : {false, true}) {
      for (bool use_color : {false, true}) {
        for (bool use_kind : {false, true}) {
          for (bool use_side : {false, true}) {
            for (const auto& rel : relations) {
              Description d;
              d.article = article;
              if (use_size) d.size = s.size;
              if (use_color) d.color = s.color;
              if (use_kind) d.kind = s.kind;
              if (use_side) d.side = s.side(width);
              d.relation = rel;
              const auto hits = match_all(d, shapes, width);
              if (hits.size() == 1 && hits.front() == target) out.push_back(d);
            }
          }
        }
      }
    }
  }
  return out;
}

void paint(RgbImage& img, const BinaryMask& mask, const std::array<int, 3>& rgb) {
  for (std::size_t p = 0; p < mask.bits.size(); ++p) {
    if (!mask.bits[p]) continue;
    for (std::size_t c = 0; c < 3; ++c) img.pixels[p * 3 + c] = clamp_byte(rgb[c]);
  }
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::Circle: return "circle";
    case ShapeKind::Square: return "square";
    case ShapeKind::Triangle: return "triangle";
  }
  return "?";
}

std::string to_string(Color c) {
  static const std::array<const char*, kColors> names = {"red", "green", "blue", "yellow", "purple"};
  return names[static_cast<std::size_t>(c)];
}

std::string to_string(SizeClass s) { return s == SizeClass::Small ? "small" : "large"; }
std::string to_string(Side s) { return s == Side::Left ? "left" : "right"; }

std::string to_string(Relation r) {
  switch (r) {
    case Relation::Above: return "above";
    case Relation::Below: return "below";
    case Relation::LeftOf: return "left of";
    case Relation::RightOf: return "right of";
  }
  return "?";
}

bool ShapeInstance::contains(double x, double y) const {
  const double dx = x - cx, dy = y - cy;
  switch (kind) {
    case ShapeKind::Circle: return dx * dx + dy * dy <= r * r;
    case ShapeKind::Square: return std::abs(dx) <= r && std::abs(dy) <= r;
    case ShapeKind::Triangle: return dy <= r && std::abs(dx) <= (dy + r) / 2.0;
  }
  return false;
}

BinaryMask rasterize(const ShapeInstance& s, std::size_t height, std::size_t width) {
  BinaryMask m(height, width);
  for (std::size_t i = 0; i < height; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      m.at(i, j) = s.contains(static_cast<double>(j) + 0.5, static_cast<double>(i) + 0.5) ? 1 : 0;
    }
  }
  return m;
}

double analytic_area(const ShapeInstance& s) {
  switch (s.kind) {
    case ShapeKind::Circle: return std::numbers::pi * s.r * s.r;
    case ShapeKind::Square: return 4.0 * s.r * s.r;
    case ShapeKind::Triangle: return 2.0 * s.r * s.r;
  }
  return 0.0;
}

double analytic_perimeter(const ShapeInstance& s) {
  switch (s.kind) {
    case ShapeKind::Circle: return 2.0 * std::numbers::pi * s.r;
    case ShapeKind::Square: return 8.0 * s.r;
    case ShapeKind::Triangle: return (2.0 + 2.0 * std::sqrt(5.0)) * s.r;
  }
  return 0.0;
}

bool related(const ShapeInstance& a, Relation rel, const ShapeInstance& b) {
  switch (rel) {
    case Relation::Above: return a.bottom() < b.top();
    case Relation::Below: return a.top() > b.bottom();
    case Relation::LeftOf: return a.right() < b.left();
    case Relation::RightOf: return a.left() > b.right();
  }
  return false;
}

std::string Description::text() const {
  std::string out;
  auto word = [&](const std::string& w) { out += (out.empty() ? "" : " ") + w; };
  if (article) word("the");
  if (size) word(to_string(*size));
  if (color) word(to_string(*color));
  word(kind ? to_string(*kind) : "shape");
  if (side) word("on the " + to_string(*side));
  if (relation) {
    const auto& [rel, ref] = *relation;
    word(to_string(rel));
    word("the");
    if (ref.size) word(to_string(*ref.size));
    if (ref.color) word(to_string(*ref.color));
    word(to_string(ref.kind));
  }
  return out;
}

bool matches(const Reference& ref, const ShapeInstance& s) {
  return s.kind == ref.kind && (!ref.size || *ref.size == s.size) && (!ref.color || *ref.color == s.color);
}

std::vector<std::size_t> match_all(const Description& d, const std::vector<ShapeInstance>& shapes, std::size_t width) {
  std::optional<std::size_t> anchor;
  if (d.relation) {
    std::vector<std::size_t> refs;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      if (matches(d.relation->second, shapes[i])) refs.push_back(i);
    }
    if (refs.size() != 1) return {};
    anchor = refs.front();
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& s = shapes[i];
    if (d.kind && *d.kind != s.kind) continue;
    if (d.color && *d.color != s.color) continue;
    if (d.size && *d.size != s.size) continue;
    if (d.side && *d.side != s.side(width)) continue;
    if (anchor && (i == *anchor || !related(s, d.relation->first, shapes[*anchor]))) continue;
    out.push_back(i);
  }
  return out;
}

KeyValues Sample::meta() const {
  KeyValues kv;
  kv["index"] = std::to_string(index);
  kv["seed"] = std::to_string(seed);
  kv["attempts"] = std::to_string(attempts);
  kv["height"] = std::to_string(image.height);
  kv["width"] = std::to_string(image.width);
  kv["shapes"] = std::to_string(shapes.size());
  kv["target"] = std::to_string(target);
  kv["expression"] = expression;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& s = shapes[i];
    kv["shape" + std::to_string(i)] = to_string(s.kind) + " " + to_string(s.color) + " " + to_string(s.size) + " " +
                                      to_string(s.side(image.width)) + " " + format_double(s.cx) + " " +
                                      format_double(s.cy) + " " + format_double(s.r);
  }
  return kv;
}

Sample generate_sample(std::size_t index, std::size_t height, std::size_t width, std::uint64_t seed) {
  if (height == 0 || width == 0 || height % 8 != 0 || width % 8 != 0) {
    throw std::invalid_argument("generate_sample: height and width must be positive multiples of 8");
  }
  Rng rng = derive_rng(seed, index);
  for (int attempt = 1; attempt <= kMaxSceneAttempts; ++attempt) {
    auto scene = place_scene(rng, height, width);
    if (!scene) continue;
    const std::size_t target = pick(rng, scene->size());
    const auto candidates = candidate_descriptions(*scene, target, width);
    if (candidates.empty()) continue;

    std::array<std::vector<std::size_t>, 4> buckets;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      buckets[bucket_of(word_count(candidates[c].text()))].push_back(c);
    }
    std::size_t b = pick(rng, buckets.size());
    if (buckets[b].empty()) {
      std::vector<std::size_t> nonempty;
      for (std::size_t k = 0; k < buckets.size(); ++k) {
        if (!buckets[k].empty()) nonempty.push_back(k);
      }
      b = nonempty[pick(rng, nonempty.size())];
    }

    Sample s;
    s.index = index;
    s.seed = seed;
    s.attempts = static_cast<std::size_t>(attempt);
    s.shapes = std::move(*scene);
    s.target = target;
    s.description = candidates[buckets[b][pick(rng, buckets[b].size())]];
    s.expression = s.description.text();

    s.image = RgbImage{height, width, std::vector<std::uint8_t>(height * width * 3)};
    const int background = 20 + static_cast<int>(pick(rng, 51));
    for (auto& px : s.image.pixels) px = clamp_byte(background + static_cast<int>(pick(rng, 17)) - 8);
    for (const auto& shape : s.shapes) {
      auto rgb = kPalette[static_cast<std::size_t>(shape.color)];
      for (auto& c : rgb) c += static_cast<int>(pick(rng, 31)) - 15;
      paint(s.image, rasterize(shape, height, width), rgb);
    }
    s.mask = rasterize(s.shapes[target], height, width);
    s.boundary = extract_boundary(s.mask);
    return s;
  }
  throw std::runtime_error("generate_sample: no unambiguous scene after " + std::to_string(kMaxSceneAttempts) +
                           " attempts (index " + std::to_string(index) + ")");
}

std::vector<Sample> generate_dataset(std::size_t n, std::size_t height, std::size_t width, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("generate_dataset: n must be at least 1");
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_sample(i, height, width, seed));
  return out;
}

Vocabulary dataset_vocabulary() {
  Vocabulary v;
  for (const char* w : {"the", "shape", "on", "of", "left", "right", "above", "below", "small", "large"}) v.add(w);
  for (std::size_t c = 0; c < kColors; ++c) v.add(to_string(static_cast<Color>(c)));
  for (std::size_t k = 0; k < kShapeKinds; ++k) v.add(to_string(static_cast<ShapeKind>(k)));
  return v;
}

BinaryMask dilate3(const BinaryMask& mask) {
  BinaryMask out(mask.height, mask.width);
  const auto h = static_cast<std::ptrdiff_t>(mask.height), w = static_cast<std::ptrdiff_t>(mask.width);
  for (std::ptrdiff_t i = 0; i < h; ++i) {
    for (std::ptrdiff_t j = 0; j < w; ++j) {
      std::uint8_t v = 0;
      for (std::ptrdiff_t di = -1; di <= 1 && !v; ++di) {
        for (std::ptrdiff_t dj = -1; dj <= 1 && !v; ++dj) {
          const auto y = i + di, x = j + dj;
          if (y >= 0 && y < h && x >= 0 && x < w) v = mask.bits[static_cast<std::size_t>(y * w + x)];
        }
      }
      out.bits[static_cast<std::size_t>(i * w + j)] = v;
    }
  }
  return out;
}

BinaryMask erode3(const BinaryMask& mask) {
  BinaryMask out(mask.height, mask.width);
  const auto h = static_cast<std::ptrdiff_t>(mask.height), w = static_cast<std::ptrdiff_t>(mask.width);
  for (std::ptrdiff_t i = 0; i < h; ++i) {
    for (std::ptrdiff_t j = 0; j < w; ++j) {
      std::uint8_t v = 1;
      for (std::ptrdiff_t di = -1; di <= 1 && v; ++di) {
        for (std::ptrdiff_t dj = -1; dj <= 1 && v; ++dj) {
          const auto y = i + di, x = j + dj;
          v = (y >= 0 && y < h && x >= 0 && x < w) ? mask.bits[static_cast<std::size_t>(y * w + x)] : 0;
        }
      }
      out.bits[static_cast<std::size_t>(i * w + j)] = v;
    }
  }
  return out;
}

BinaryMask extract_boundary(const BinaryMask& mask) {
  if (mask.bits.size() != mask.height * mask.width) throw std::invalid_argument("extract_boundary: size mismatch");
  for (auto b : mask.bits) {
    if (b > 1) throw std::invalid_argument("extract_boundary: mask must be binary");
  }
  const auto d = dilate3(mask);
  const auto e = erode3(mask);
  BinaryMask out(mask.height, mask.width);
  for (std::size_t p = 0; p < out.bits.size(); ++p) out.bits[p] = d.bits[p] ^ e.bits[p];
  return out;
}

std::vector<std::string> assign_splits(std::size_t n, std::size_t val_count, std::uint64_t seed) {
  if (val_count > n) throw std::invalid_argument("assign_splits: more validation samples than samples");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = derive_rng(seed, 0x5eed5);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[pick(rng, i)]);
  std::vector<std::string> splits(n, "train");
  for (std::size_t k = 0; k < val_count; ++k) splits[order[k]] = "val";
  return splits;
}

std::string sample_id(std::size_t index) {
  std::string digits = std::to_string(index);
  return "s" + std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits;
}

void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples,
                   const std::vector<std::string>& splits, const Vocabulary& vocab) {
  if (splits.size() != samples.size()) throw std::invalid_argument("write_dataset: one split per sample");
  std::filesystem::create_directories(dir);
  std::string manifest = "id\tsplit\ttokens\texpression\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto id = sample_id(s.index);
    const auto sub = dir / id;
    std::filesystem::create_directories(sub);
    write_ppm(sub / "image.ppm", s.image);
    write_pbm(sub / "mask.pbm", s.mask);
    write_pbm(sub / "boundary.pbm", s.boundary);
    write_text(sub / "expr.txt", s.expression + "\n");
    write_text(sub / "meta.txt", format_key_values(s.meta()));
    manifest += id + "\t" + splits[i] + "\t" + std::to_string(word_count(s.expression)) + "\t" + s.expression + "\n";
  }
  write_text(dir / "manifest.tsv", manifest);
  vocab.save(dir / "vocab.txt");
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
  std::istringstream is(read_text(dir / "manifest.tsv"));
  std::string line;
  std::getline(is, line);
  if (line != "id\tsplit\ttokens\texpression") throw std::runtime_error("manifest.tsv: unexpected header");
  std::vector<ManifestEntry> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string tokens;
    if (!std::getline(ls, e.id, '\t') || !std::getline(ls, e.split, '\t') || !std::getline(ls, tokens, '\t') ||
        !std::getline(ls, e.expression)) {
      throw std::runtime_error("manifest.tsv: malformed line '" + line + "'");
    }
    e.tokens = static_cast<std::size_t>(std::stoull(tokens));
    out.push_back(std::move(e));
  }
  return out;
}

LoadedSample load_sample(const std::filesystem::path& dir, const std::string& id) {
  LoadedSample s;
  s.id = id;
  const auto sub = dir / id;
  s.image = read_ppm(sub / "image.ppm");
  s.mask = read_pbm(sub / "mask.pbm");
  s.boundary = read_pbm(sub / "boundary.pbm");
  s.expression = read_text(sub / "expr.txt");
  while (!s.expression.empty() && (s.expression.back() == '\n' || s.expression.back() == '\r')) s.expression.pop_back();
  return s;
}

}  // namespace refseg
