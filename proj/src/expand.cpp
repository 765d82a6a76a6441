#include "st/expand.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace st {

namespace {

// (y,x) -> source coordinates for a clockwise rotation by angle
inline void rot_src(int angle, int side, int y, int x, int& sy, int& sx) {
  switch (angle) {
    case 0: sy = y; sx = x; break;
    case 90: sy = side - 1 - x; sx = y; break;
    case 180: sy = side - 1 - y; sx = side - 1 - x; break;
    case 270: sy = x; sx = side - 1 - y; break;
    default: throw std::invalid_argument("rotation angle must be a multiple of 90 in [0,270]");
  }
}

}  // namespace

Patch rotate_patch(const Patch& patch, int angle) {
  if (patch.side * patch.side * 3 != int(patch.pix.size()))
    throw std::invalid_argument("rotate_patch: patch is not square");
  Patch out;
  out.side = patch.side;
  out.pix.resize(patch.pix.size());
  int sy, sx;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < patch.side; ++y)
      for (int x = 0; x < patch.side; ++x) {
        rot_src(angle, patch.side, y, x, sy, sx);
        out.at(c, y, x) = patch.at(c, sy, sx);
      }
  return out;
}

LabeledImage rotate_image(const LabeledImage& image, int angle) {
  LabeledImage out = image;
  int sy, sx;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < image.side; ++y)
      for (int x = 0; x < image.side; ++x) {
        rot_src(angle, image.side, y, x, sy, sx);
        out.at(c, y, x) = image.at(c, sy, sx);
      }
  return out;
}

Patch resize_patch(const Patch& patch, int new_side) {
  if (new_side == patch.side) return patch;
  Patch out;
  out.side = new_side;
  out.pix.assign(size_t(3) * new_side * new_side, 0.0);
  double scale = double(patch.side) / new_side;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < new_side; ++y) {
      double fy = (y + 0.5) * scale - 0.5;
      int y0 = int(std::floor(fy));
      double ay = fy - y0;
      int y0c = std::clamp(y0, 0, patch.side - 1), y1c = std::clamp(y0 + 1, 0, patch.side - 1);
      for (int x = 0; x < new_side; ++x) {
        double fx = (x + 0.5) * scale - 0.5;
        int x0 = int(std::floor(fx));
        double ax = fx - x0;
        int x0c = std::clamp(x0, 0, patch.side - 1), x1c = std::clamp(x0 + 1, 0, patch.side - 1);
        out.at(c, y, x) = (1 - ay) * ((1 - ax) * patch.at(c, y0c, x0c) + ax * patch.at(c, y0c, x1c)) +
                          ay * ((1 - ax) * patch.at(c, y1c, x0c) + ax * patch.at(c, y1c, x1c));
      }
    }
  return out;
}

LabeledImage random_conv_smooth(const LabeledImage& image, RngStream& rng, double p_rc) {
  if (!rng.bernoulli(p_rc)) return image;
  double k[9];
  double sum = 0;
  for (double& v : k) {
    v = rng.normal();
    sum += v;
  }
  // shift so the kernel sums to exactly 1
  double shift = (1.0 - sum) / 9.0;
  for (double& v : k) v += shift;

  LabeledImage out = image;
  int n = image.side;
  auto reflect = [n](int i) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
  };
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        double acc = 0;
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx)
            acc += k[ky * 3 + kx] * image.at(c, reflect(y + ky - 1), reflect(x + kx - 1));
        out.at(c, y, x) = std::clamp(acc, 0.0, 1.0);
      }
  return out;
}

ExpandedSample compose(const FgBgPair& fg_donor, const FgBgPair& bg_donor, int angle,
                       RngStream& rng, double p_rc) {
  Patch fg = rotate_patch(fg_donor.foreground, angle);
  fg = resize_patch(fg, bg_donor.box.side);
  FgBgPair stitched;
  stitched.foreground = std::move(fg);
  stitched.background = bg_donor.background;
  stitched.box = bg_donor.box;
  ExpandedSample s;
  s.image = recompose(stitched);
  s.image.class_id = fg_donor.background.class_id;  // label follows the foreground donor
  s.image.gt_box.reset();
  if (p_rc > 0) s.image = random_conv_smooth(s.image, rng, p_rc);
  s.rotation_label = angle / 90;
  s.angle = angle;
  return s;
}

ExpandedSupportSet build_expanded_set(const std::vector<LabeledImage>& support,
                                      const std::vector<FgBgPair>& wsol_results,
                                      const ExpandConfig& cfg, RngStream& rng) {
  bool needs_wsol = cfg.wsol_rot || cfg.wsol_exc_rot;
  if (needs_wsol && wsol_results.size() != support.size())
    throw std::invalid_argument("build_expanded_set: one FgBgPair per support sample required");

  ExpandedSupportSet set;
  int n = int(support.size());
  int n_classes = 0;
  for (const auto& im : support) n_classes = std::max(n_classes, im.class_id + 1);
  set.by_class.assign(size_t(n_classes), {});

  auto push = [&](ExpandedSample s) {
    set.by_class[size_t(s.image.class_id)].push_back(int(set.samples.size()));
    set.samples.push_back(std::move(s));
  };

  for (int i = 0; i < n; ++i) {
    ExpandedSample orig;
    orig.image = support[size_t(i)];
    orig.rotation_label = 0;
    orig.src_index = orig.bg_index = i;
    push(std::move(orig));
  }

  for (int i = 0; i < n; ++i) {
    if (cfg.wsol_rot) {
      for (int g = 0; g < cfg.g_self; ++g) {
        int angle = 90 * (1 + rng.uniform_int(3));  // nonzero
        ExpandedSample s = compose(wsol_results[size_t(i)], wsol_results[size_t(i)], angle, rng,
                                   cfg.p_rc);
        s.src_index = s.bg_index = i;
        push(std::move(s));
      }
    }
    if (cfg.wsol_exc_rot && n > 1) {
      for (int g = 0; g < cfg.g_exch; ++g) {
        int j = rng.uniform_int(n - 1);
        if (j >= i) ++j;  // uniform over the other support samples
        int angle = 90 * rng.uniform_int(4);
        ExpandedSample s = compose(wsol_results[size_t(i)], wsol_results[size_t(j)], angle, rng,
                                   cfg.p_rc);
        s.src_index = i;
        s.bg_index = j;
        push(std::move(s));
      }
    }
    if (cfg.whole_rot) {
      int count = cfg.g_self + (n > 1 ? cfg.g_exch : 0);
      for (int g = 0; g < count; ++g) {
        int angle = 90 * (1 + rng.uniform_int(3));
        ExpandedSample s;
        s.image = rotate_image(support[size_t(i)], angle);
        if (cfg.p_rc > 0) s.image = random_conv_smooth(s.image, rng, cfg.p_rc);
        s.rotation_label = angle / 90;
        s.angle = angle;
        s.src_index = s.bg_index = i;
        push(std::move(s));
      }
    }
  }
  return set;
}

}  // namespace st
