#pragma once

#include <optional>
#include <string>
#include <vector>

#include "st/rng.hpp"

namespace st {

// Axis-aligned rectangle in pixel coordinates (used for synthetic
// ground-truth boxes).
struct Box {
  int top = 0, left = 0, height = 0, width = 0;
  int area() const { return height * width; }
};

double box_iou(const Box& a, const Box& b);

// Square RGB image, channel-major (CHW), values in [0,1].
struct LabeledImage {
  int side = 0;
  std::vector<double> pix;  // 3 * side * side
  int class_id = 0;
  std::optional<Box> gt_box;

  double at(int c, int y, int x) const { return pix[size_t((c * side + y) * side + x)]; }
  double& at(int c, int y, int x) { return pix[size_t((c * side + y) * side + x)]; }
  static LabeledImage blank(int side, int class_id = 0) {
    LabeledImage im;
    im.side = side;
    im.pix.assign(size_t(3) * side * side, 0.0);
    im.class_id = class_id;
    return im;
  }
};

struct Episode {
  std::vector<LabeledImage> support;  // class_id holds the episode-local label
  std::vector<LabeledImage> query;
  int way = 0, shot = 0, queries_per_class = 0;
};

struct DomainSpec {
  std::string name;
  std::string root;   // directory, or "synth:<family>:<seed>"
  std::string split;  // train | val | test (synthetic roots only)
  int n_classes = 16;
  int images_per_class = 40;
};

struct ClassGroup {
  int class_id = 0;
  std::string name;
  std::vector<LabeledImage> images;
};

struct Collection {
  int side = 0;
  std::vector<ClassGroup> classes;
};

// Loads a domain. Directory roots use one subdirectory per class
// (<root>/<class>/*.png|jpg); classes with fewer than min_per_class
// images are excluded with a warning. Synthetic roots generate on the
// fly and apply the split's class subset.
Collection load_domain(const DomainSpec& spec, int side, int min_per_class);

// Procedural shape-over-texture dataset. Same seed gives byte-identical
// pixels; distinct texture families share shape geometry per (seed,
// class, index) but differ in background.
Collection generate_synthetic_domain(uint64_t seed, int n_classes, int images_per_class,
                                     const std::string& texture_family, int side);

int synthetic_max_classes();

// Applies the deterministic class split used for synthetic domains
// (train/val/test by class index, disjoint).
Collection split_classes(const Collection& full, const std::string& split);

Episode sample_episode(const Collection& coll, int way, int shot, int queries_per_class,
                       RngStream& rng);

// Writes the collection as <dir>/<class>/<index>.png for inspection.
void export_collection(const Collection& coll, const std::string& dir);

}  // namespace st
