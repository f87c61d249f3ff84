// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Seeded synthetic referring-segmentation data: scenes of 2-4 flat shapes,
// templated expressions that pick out exactly one of them, ground-truth masks
// and one-pixel boundary bands.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "refseg/image_io.hpp"
#include "refseg/model.hpp"
#include "refseg/text_encoder.hpp"

namespace refseg {

enum class ShapeKind { Circle, Square, Triangle };
enum class Color { Red, Green, Blue, Yellow, Purple };
enum class SizeClass { Small, Large };
enum class Side { Left, Right };
enum class Relation { Above, Below, LeftOf, RightOf };

inline constexpr std::size_t kShapeKinds = 3;
inline constexpr std::size_t kColors = 5;

std::string to_string(ShapeKind k);
std::string to_string(Color c);
std::string to_string(SizeClass s);
std::string to_string(Side s);
std::string to_string(Relation r);  // "above", "below", "left of", "right of"

// Circle of radius r, axis-aligned square of half-side r, or upward triangle
// with apex (cx, cy - r) and base from (cx - r, cy + r) to (cx + r, cy + r).
// Coordinates are continuous; pixel (i, j) has centre (j + 0.5, i + 0.5).
struct ShapeInstance {
  ShapeKind kind = ShapeKind::Circle;
  Color color = Color::Red;
  SizeClass size = SizeClass::Small;
  double cx = 0, cy = 0, r = 0;

  double left() const { return cx - r; }
  double right() const { return cx + r; }
  double top() const { return cy - r; }
  double bottom() const { return cy + r; }
  Side side(std::size_t width) const { return cx < static_cast<double>(width) / 2.0 ? Side::Left : Side::Right; }
  bool contains(double x, double y) const;
};

BinaryMask rasterize(const ShapeInstance& s, std::size_t height, std::size_t width);
double analytic_area(const ShapeInstance& s);
double analytic_perimeter(const ShapeInstance& s);

// True when a lies strictly on the given side of b (bounding boxes disjoint
// along that axis).
bool related(const ShapeInstance& a, Relation rel, const ShapeInstance& b);

struct Reference {
  std::optional<SizeClass> size;
  std::optional<Color> color;
  ShapeKind kind = ShapeKind::Circle;
};

// [the] [size] [color] (kind | "shape") [on the left|right] [relation the reference]
struct Description {
  bool article = false;
  std::optional<SizeClass> size;
  std::optional<Color> color;
  std::optional<ShapeKind> kind;
  std::optional<Side> side;
  std::optional<std::pair<Relation, Reference>> relation;

  std::string text() const;
};

bool matches(const Reference& ref, const ShapeInstance& s);
// Relations hold only when the reference picks out exactly one other shape.
std::vector<std::size_t> match_all(const Description& d, const std::vector<ShapeInstance>& shapes, std::size_t width);

struct Sample {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  std::size_t attempts = 1;
  RgbImage image;
  std::vector<ShapeInstance> shapes;
  std::size_t target = 0;
  Description description;
  std::string expression;
  BinaryMask mask;
  BinaryMask boundary;

  KeyValues meta() const;
};

// Length buckets [1-2], [3], [4-5], [6-20] as ascending lower edges
// with an exclusive upper end.
inline const std::vector<std::size_t> kLengthBucketEdges = {1, 3, 4, 6, 21};

Sample generate_sample(std::size_t index, std::size_t height, std::size_t width, std::uint64_t seed);
std::vector<Sample> generate_dataset(std::size_t n, std::size_t height, std::size_t width, std::uint64_t seed);

// Every word the templates can emit, in a fixed order.
Vocabulary dataset_vocabulary();

// dilate(mask, 3x3) XOR erode(mask, 3x3). Pixels outside the frame count as
// background, so a full-frame mask keeps its border ring.
BinaryMask extract_boundary(const BinaryMask& mask);
BinaryMask dilate3(const BinaryMask& mask);
BinaryMask erode3(const BinaryMask& mask);

// Sample i's split after a seeded shuffle: the first val_count shuffled
// indices are "val", the rest "train".
std::vector<std::string> assign_splits(std::size_t n, std::size_t val_count, std::uint64_t seed);

struct ManifestEntry {
  std::string id;
  std::string split;
  std::size_t tokens = 0;
  std::string expression;
};

std::string sample_id(std::size_t index);

// Layout: <dir>/manifest.tsv, <dir>/vocab.txt, <dir>/<id>/{image.ppm, mask.pbm,
// boundary.pbm, expr.txt, meta.txt}.
void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples,
                   const std::vector<std::string>& splits, const Vocabulary& vocab);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir);

struct LoadedSample {
  std::string id;
  std::string expression;
  RgbImage image;
  BinaryMask mask;
  BinaryMask boundary;
};

LoadedSample load_sample(const std::filesystem::path& dir, const std::string& id);

}  // namespace refseg
