#include "st/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace fs = std::filesystem;

namespace st {

double box_iou(const Box& a, const Box& b) {
  int t = std::max(a.top, b.top);
  int l = std::max(a.left, b.left);
  int bb = std::min(a.top + a.height, b.top + b.height);
  int r = std::min(a.left + a.width, b.left + b.width);
  int inter = std::max(0, bb - t) * std::max(0, r - l);
  int uni = a.area() + b.area() - inter;
  return uni > 0 ? double(inter) / uni : 0.0;
}

namespace {

const char* kShapeNames[] = {
    "glyph00", "glyph01", "glyph02", "glyph03", "glyph04", "glyph05", "glyph06", "glyph07",
    "glyph08", "glyph09", "glyph10", "glyph11", "glyph12", "glyph13", "glyph14", "glyph15",
};
constexpr int kNumShapes = 16;

// Each class is a figure of six equal bars on a 3x3 node grid. All classes
// share the same bounding box (2x2 cells), bar stock (length, thickness,
// ink) and junction profile (one T-joint, three corners, three free ends,
// no straight-through pairs);
// they differ only in how the bars are arranged, so only the global layout
// carries label information. Segments are {x1,y1,x2,y2} in grid coordinates.
constexpr int kGlyphSegs[kNumShapes][6][4] = {
    {{0, 0, 0, 1}, {0, 1, 1, 1}, {0, 2, 1, 2}, {1, 1, 1, 2}, {1, 2, 2, 2}, {2, 1, 2, 2}},
    {{0, 0, 0, 1}, {0, 1, 1, 1}, {0, 2, 1, 2}, {0, 0, 1, 0}, {1, 1, 1, 2}, {1, 2, 2, 2}},
    {{0, 0, 0, 1}, {0, 1, 1, 1}, {1, 0, 1, 1}, {1, 1, 1, 2}, {1, 2, 2, 2}, {2, 1, 2, 2}},
    {{0, 0, 0, 1}, {0, 2, 1, 2}, {0, 0, 1, 0}, {1, 0, 1, 1}, {1, 1, 1, 2}, {1, 1, 2, 1}},
    {{0, 0, 0, 1}, {0, 1, 1, 1}, {0, 2, 1, 2}, {1, 1, 1, 2}, {1, 1, 2, 1}, {2, 1, 2, 2}},
    {{0, 0, 0, 1}, {0, 1, 1, 1}, {0, 2, 1, 2}, {0, 0, 1, 0}, {1, 1, 1, 2}, {1, 1, 2, 1}},
    {{0, 0, 0, 1}, {0, 1, 1, 1}, {0, 0, 1, 0}, {1, 1, 1, 2}, {1, 1, 2, 1}, {2, 1, 2, 2}},
    {{0, 0, 0, 1}, {0, 1, 1, 1}, {0, 0, 1, 0}, {1, 1, 1, 2}, {1, 1, 2, 1}, {1, 2, 2, 2}},
    {{0, 0, 0, 1}, {0, 0, 1, 0}, {1, 0, 1, 1}, {1, 1, 1, 2}, {1, 1, 2, 1}, {1, 2, 2, 2}},
    {{0, 0, 0, 1}, {0, 1, 0, 2}, {0, 1, 1, 1}, {0, 0, 1, 0}, {1, 1, 1, 2}, {1, 2, 2, 2}},
    {{0, 0, 0, 1}, {0, 1, 0, 2}, {0, 1, 1, 1}, {1, 1, 1, 2}, {1, 2, 2, 2}, {2, 1, 2, 2}},
    {{0, 1, 0, 2}, {0, 1, 1, 1}, {0, 0, 1, 0}, {1, 0, 1, 1}, {1, 1, 1, 2}, {1, 2, 2, 2}},
    {{0, 1, 0, 2}, {0, 1, 1, 1}, {1, 0, 1, 1}, {1, 1, 1, 2}, {1, 2, 2, 2}, {2, 1, 2, 2}},
    {{0, 1, 0, 2}, {0, 1, 1, 1}, {1, 0, 1, 1}, {1, 0, 2, 0}, {1, 1, 1, 2}, {1, 2, 2, 2}},
    {{0, 1, 0, 2}, {0, 1, 1, 1}, {1, 0, 1, 1}, {1, 0, 2, 0}, {1, 1, 2, 1}, {2, 1, 2, 2}},
    {{0, 1, 0, 2}, {0, 1, 1, 1}, {1, 0, 1, 1}, {1, 1, 2, 1}, {1, 2, 2, 2}, {2, 1, 2, 2}},
};

constexpr double kGlyphCell = 0.85;   // grid cell size in unit-box coordinates
constexpr double kGlyphThick = 0.27;  // bar thickness, same scale

bool shape_hit(int kind, double u, double v) {
  // center of the figure's grid bounding box, computed once per class
  static double cx[kNumShapes], cy[kNumShapes];
  static bool init = false;
  if (!init) {
    for (int k = 0; k < kNumShapes; ++k) {
      int x_lo = 2, x_hi = 0, y_lo = 2, y_hi = 0;
      for (const auto& s : kGlyphSegs[k]) {
        x_lo = std::min({x_lo, s[0], s[2]}); x_hi = std::max({x_hi, s[0], s[2]});
        y_lo = std::min({y_lo, s[1], s[3]}); y_hi = std::max({y_hi, s[1], s[3]});
      }
      cx[k] = 0.5 * (x_lo + x_hi);
      cy[k] = 0.5 * (y_lo + y_hi);
    }
    init = true;
  }
  const double h = kGlyphThick * 0.5;
  for (const auto& s : kGlyphSegs[kind]) {
    double x1 = (std::min(s[0], s[2]) - cx[kind]) * kGlyphCell;
    double x2 = (std::max(s[0], s[2]) - cx[kind]) * kGlyphCell;
    double y1 = (std::min(s[1], s[3]) - cy[kind]) * kGlyphCell;
    double y2 = (std::max(s[1], s[3]) - cy[kind]) * kGlyphCell;
    if (u >= x1 - h && u <= x2 + h && v >= y1 - h && v <= y2 + h) return true;
  }
  return false;
}

void paint_background(LabeledImage& im, const std::string& family, RngStream& rng) {
  int side = im.side;
  const double two_pi = 6.283185307179586;
  if (family == "A") {
    // low-frequency wave mixes
    for (int c = 0; c < 3; ++c) {
      double fx = rng.uniform(1.0, 4.0), fy = rng.uniform(1.0, 4.0);
      double ph = rng.uniform(0.0, two_pi);
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
          im.at(c, y, x) = 0.475 + 0.12 * std::sin(two_pi * (fx * x + fy * y) / side + ph);
    }
  } else if (family == "B") {
    // coarse blob grid, bilinearly upsampled
    const int g = 5;
    double grid[3][g][g];
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < g; ++i)
        for (int j = 0; j < g; ++j) grid[c][i][j] = rng.uniform(0.32, 0.64);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
          double gy = double(y) / (side - 1) * (g - 1);
          double gx = double(x) / (side - 1) * (g - 1);
          int y0 = std::min(int(gy), g - 2), x0 = std::min(int(gx), g - 2);
          double ay = gy - y0, ax = gx - x0;
          im.at(c, y, x) = (1 - ay) * ((1 - ax) * grid[c][y0][x0] + ax * grid[c][y0][x0 + 1]) +
                           ay * ((1 - ax) * grid[c][y0 + 1][x0] + ax * grid[c][y0 + 1][x0 + 1]);
        }
  } else if (family == "C") {
    // diagonal stripes
    for (int c = 0; c < 3; ++c) {
      double k = rng.uniform(2.0, 6.0);
      double ph = rng.uniform(0.0, two_pi);
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
          im.at(c, y, x) = 0.475 + 0.12 * std::sin(two_pi * k * (x + y) / (2.0 * side) + ph);
    }
  } else {
    throw std::invalid_argument("unknown texture family '" + family + "' (use A, B or C)");
  }
}

// fraction of the bounding box covered by each shape, used to equalize
// on-screen shape area across classes
double fill_fraction(int kind) {
  static double cache[kNumShapes] = {0};
  if (cache[kind] == 0.0) {
    const int n = 201;
    int hits = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double v = -1.0 + 2.0 * i / (n - 1), u = -1.0 + 2.0 * j / (n - 1);
        if (shape_hit(kind, u, v)) ++hits;
      }
    cache[kind] = double(hits) / (n * n);
  }
  return cache[kind];
}

}  // namespace

int synthetic_max_classes() { return kNumShapes; }

Collection generate_synthetic_domain(uint64_t seed, int n_classes, int images_per_class,
                                     const std::string& texture_family, int side) {
  if (n_classes < 2 || n_classes > kNumShapes)
    throw std::invalid_argument("n_classes must be in [2," + std::to_string(kNumShapes) + "]");
  if (side < 16) throw std::invalid_argument("synthetic side must be >= 16");

  uint64_t family_salt = 0;
  for (char ch : texture_family) family_salt = family_salt * 131 + uint64_t(ch);

  Collection coll;
  coll.side = side;
  for (int k = 0; k < n_classes; ++k) {
    ClassGroup group;
    group.class_id = k;
    group.name = kShapeNames[k];
    for (int idx = 0; idx < images_per_class; ++idx) {
      uint64_t tag = uint64_t(k) * 1000003ULL + uint64_t(idx);
      // geometry stream is family-independent, background stream is not
      RngStream geo = derived_stream(seed, tag, 1);
      RngStream bg = derived_stream(mix_seed(seed, family_salt), tag, 2);

      LabeledImage im = LabeledImage::blank(side, k);
      paint_background(im, texture_family, bg);

      // pick the on-screen shape area, then derive the bounding box from the
      // per-class fill fraction so pixel count carries no class signal
      double sfrac = std::sqrt(geo.uniform(0.06, 0.16) / fill_fraction(k));
      int s = std::min(int(std::lround(sfrac * side)), side - 4);
      int margin = s / 2 + 1;
      int cy = margin + geo.uniform_int(std::max(1, side - 2 * margin));
      int cx = margin + geo.uniform_int(std::max(1, side - 2 * margin));
      double col[3];
      for (int c = 0; c < 3; ++c) col[c] = geo.uniform(0.8, 1.0);

      int y_lo = side, y_hi = -1, x_lo = side, x_hi = -1;
      double half = s * 0.5;
      for (int y = cy - s / 2; y <= cy + s / 2; ++y) {
        for (int x = cx - s / 2; x <= cx + s / 2; ++x) {
          if (y < 0 || y >= side || x < 0 || x >= side) continue;
          double u = (x - cx) / half, v = (y - cy) / half;
          if (!shape_hit(k, u, v)) continue;
          for (int c = 0; c < 3; ++c) im.at(c, y, x) = col[c];
          y_lo = std::min(y_lo, y); y_hi = std::max(y_hi, y);
          x_lo = std::min(x_lo, x); x_hi = std::max(x_hi, x);
        }
      }
      im.gt_box = Box{y_lo, x_lo, y_hi - y_lo + 1, x_hi - x_lo + 1};
      group.images.push_back(std::move(im));
    }
    coll.classes.push_back(std::move(group));
  }
  return coll;
}

Collection split_classes(const Collection& full, const std::string& split) {
  if (split == "all" || split.empty()) return full;
  int n = int(full.classes.size());
  int n_tr = n / 2;
  int n_val = std::max(1, int(std::lround(0.2 * n)));
  if (n_tr < 1 || n_tr + n_val >= n)
    throw std::invalid_argument("too few classes (" + std::to_string(n) + ") for train/val/test split");
  int lo, hi;
  if (split == "train") { lo = 0; hi = n_tr; }
  else if (split == "val") { lo = n_tr; hi = n_tr + n_val; }
  else if (split == "test") { lo = n_tr + n_val; hi = n; }
  else throw std::invalid_argument("unknown split '" + split + "'");
  Collection out;
  out.side = full.side;
  out.classes.assign(full.classes.begin() + lo, full.classes.begin() + hi);
  return out;
}

Collection load_domain(const DomainSpec& spec, int side, int min_per_class) {
  if (spec.root.rfind("synth:", 0) == 0) {
    // synth:<family>[:<seed>]
    std::string rest = spec.root.substr(6);
    std::string family = rest;
    uint64_t seed = 0;
    auto colon = rest.find(':');
    if (colon != std::string::npos) {
      family = rest.substr(0, colon);
      seed = std::stoull(rest.substr(colon + 1));
    }
    Collection full =
        generate_synthetic_domain(seed, spec.n_classes, spec.images_per_class, family, side);
    Collection out = split_classes(full, spec.split);
    for (auto& g : out.classes) {
      if (int(g.images.size()) < min_per_class)
        throw std::runtime_error("synthetic class '" + g.name + "' has too few images");
    }
    return out;
  }

  if (!fs::is_directory(spec.root))
    throw std::runtime_error("dataset root does not exist: " + spec.root);

  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(spec.root))
    if (e.is_directory()) class_dirs.push_back(e.path());
  std::sort(class_dirs.begin(), class_dirs.end());

  Collection coll;
  coll.side = side;
  int next_id = 0;
  for (const auto& dir : class_dirs) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      auto ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
      if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());

    ClassGroup group;
    group.name = dir.filename().string();
    for (const auto& f : files) {
      cv::Mat img = cv::imread(f.string(), cv::IMREAD_COLOR);
      if (img.empty()) continue;
      cv::Mat resized;
      cv::resize(img, resized, cv::Size(side, side), 0, 0, cv::INTER_AREA);
      LabeledImage im = LabeledImage::blank(side);
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
          auto px = resized.at<cv::Vec3b>(y, x);  // BGR
          im.at(0, y, x) = px[2] / 255.0;
          im.at(1, y, x) = px[1] / 255.0;
          im.at(2, y, x) = px[0] / 255.0;
        }
      group.images.push_back(std::move(im));
    }
    if (int(group.images.size()) < min_per_class) {
      std::cerr << "[data] warning: class '" << group.name << "' has "
                << group.images.size() << " images (< " << min_per_class
                << "), excluding it\n";
      continue;
    }
    group.class_id = next_id;
    for (auto& im : group.images) im.class_id = next_id;
    ++next_id;
    coll.classes.push_back(std::move(group));
  }
  return coll;
}

Episode sample_episode(const Collection& coll, int way, int shot, int queries_per_class,
                       RngStream& rng) {
  if (int(coll.classes.size()) < way)
    throw std::runtime_error("sample_episode: need " + std::to_string(way) + " classes, have " +
                             std::to_string(coll.classes.size()));
  int need = shot + queries_per_class;
  std::vector<int> class_idx(coll.classes.size());
  for (size_t i = 0; i < class_idx.size(); ++i) class_idx[i] = int(i);
  rng.shuffle(class_idx);

  Episode ep;
  ep.way = way;
  ep.shot = shot;
  ep.queries_per_class = queries_per_class;
  for (int local = 0; local < way; ++local) {
    const ClassGroup& g = coll.classes[size_t(class_idx[size_t(local)])];
    if (int(g.images.size()) < need)
      throw std::runtime_error("sample_episode: class '" + g.name + "' has " +
                               std::to_string(g.images.size()) + " images, need " +
                               std::to_string(need));
    std::vector<int> order(g.images.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
    rng.shuffle(order);
    for (int i = 0; i < shot; ++i) {
      LabeledImage im = g.images[size_t(order[size_t(i)])];
      im.class_id = local;
      ep.support.push_back(std::move(im));
    }
    for (int i = 0; i < queries_per_class; ++i) {
      LabeledImage im = g.images[size_t(order[size_t(shot + i)])];
      im.class_id = local;
      ep.query.push_back(std::move(im));
    }
  }
  return ep;
}

void export_collection(const Collection& coll, const std::string& dir) {
  for (const auto& g : coll.classes) {
    fs::path cdir = fs::path(dir) / g.name;
    fs::create_directories(cdir);
    int idx = 0;
    for (const auto& im : g.images) {
      cv::Mat mat(im.side, im.side, CV_8UC3);
      for (int y = 0; y < im.side; ++y)
        for (int x = 0; x < im.side; ++x) {
          auto clip = [](double v) { return uchar(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5); };
          mat.at<cv::Vec3b>(y, x) = cv::Vec3b(clip(im.at(2, y, x)), clip(im.at(1, y, x)),
                                              clip(im.at(0, y, x)));
        }
      char name[32];
      std::snprintf(name, sizeof(name), "img_%04d.png", idx++);
      cv::imwrite((cdir / name).string(), mat);
    }
  }
}

}  // namespace st
