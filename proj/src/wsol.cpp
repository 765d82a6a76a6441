#include "st/wsol.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <stdexcept>

namespace st {

namespace {

void upsample_bilinear(const std::vector<double>& src, int h, int w, std::vector<double>& dst,
                       int H, int W) {
  dst.assign(size_t(H) * W, 0.0);
  double sy = double(h) / H, sx = double(w) / W;
  for (int y = 0; y < H; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = int(std::floor(fy));
    double ay = fy - y0;
    int y0c = std::clamp(y0, 0, h - 1), y1c = std::clamp(y0 + 1, 0, h - 1);
    for (int x = 0; x < W; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = int(std::floor(fx));
      double ax = fx - x0;
      int x0c = std::clamp(x0, 0, w - 1), x1c = std::clamp(x0 + 1, 0, w - 1);
      dst[size_t(y) * W + x] =
          (1 - ay) * ((1 - ax) * src[size_t(y0c) * w + x0c] + ax * src[size_t(y0c) * w + x1c]) +
          ay * ((1 - ax) * src[size_t(y1c) * w + x0c] + ax * src[size_t(y1c) * w + x1c]);
    }
  }
}

ActivationMap make_activation(std::vector<double> values, int h, int w, int image_side) {
  ActivationMap act;
  act.h = h;
  act.w = w;
  act.values = std::move(values);
  act.H = image_side;
  act.W = image_side;
  upsample_bilinear(act.values, h, w, act.upsampled, act.H, act.W);
  return act;
}

}  // namespace

ActivationMap cam(const FeatureMap& map, int image_side) {
  std::vector<double> vals(size_t(map.h) * map.w, 0.0);
  double inv = 1.0 / map.channels;
  for (int d = 0; d < map.channels; ++d) {
    const double* p = map.v.data() + size_t(d) * map.h * map.w;
    for (int i = 0; i < map.h * map.w; ++i) vals[size_t(i)] += p[i];
  }
  for (auto& v : vals) v = std::max(0.0, v * inv);
  return make_activation(std::move(vals), map.h, map.w, image_side);
}

ActivationMap cam_weighted(const FeatureMap& map, const std::vector<double>& weights,
                           int image_side) {
  if (int(weights.size()) != map.channels)
    throw std::invalid_argument("cam_weighted: weight size mismatch");
  double norm = 0;
  for (double w : weights) norm += w * w;
  norm = norm > 0 ? 1.0 / std::sqrt(norm) : 0.0;
  std::vector<double> vals(size_t(map.h) * map.w, 0.0);
  for (int d = 0; d < map.channels; ++d) {
    double w = weights[size_t(d)] * norm;
    const double* p = map.v.data() + size_t(d) * map.h * map.w;
    for (int i = 0; i < map.h * map.w; ++i) vals[size_t(i)] += w * p[i];
  }
  for (auto& v : vals) v = std::max(0.0, v);
  return make_activation(std::move(vals), map.h, map.w, image_side);
}

std::vector<uint8_t> auto_threshold(const ActivationMap& act, double tau) {
  double mx = 0;
  for (double v : act.upsampled) mx = std::max(mx, v);
  std::vector<uint8_t> mask(act.upsampled.size(), 0);
  if (mx <= 0) return mask;
  double thr = tau * mx;
  for (size_t i = 0; i < mask.size(); ++i) mask[i] = act.upsampled[i] >= thr ? 1 : 0;
  return mask;
}

std::optional<ObjectBox> largest_component_box(const std::vector<uint8_t>& mask, int H, int W) {
  std::vector<int> label(size_t(H) * W, -1);
  int best_count = 0;
  int best_anchor = -1;  // min raster index of the winning component
  int best_t = 0, best_l = 0, best_b = 0, best_r = 0;
  std::vector<int> stack;
  int next = 0;
  for (int start = 0; start < H * W; ++start) {
    if (!mask[size_t(start)] || label[size_t(start)] >= 0) continue;
    int id = next++;
    int count = 0, t = H, l = W, b = -1, r = -1;
    stack.clear();
    stack.push_back(start);
    label[size_t(start)] = id;
    while (!stack.empty()) {
      int p = stack.back();
      stack.pop_back();
      int y = p / W, x = p % W;
      ++count;
      t = std::min(t, y); b = std::max(b, y);
      l = std::min(l, x); r = std::max(r, x);
      const int ny[4] = {y - 1, y + 1, y, y};
      const int nx[4] = {x, x, x - 1, x + 1};
      for (int k = 0; k < 4; ++k) {
        if (ny[k] < 0 || ny[k] >= H || nx[k] < 0 || nx[k] >= W) continue;
        int q = ny[k] * W + nx[k];
        if (mask[size_t(q)] && label[size_t(q)] < 0) {
          label[size_t(q)] = id;
          stack.push_back(q);
        }
      }
    }
    // scanning in raster order, 'start' is the component's min raster index
    if (count > best_count || (count == best_count && start < best_anchor)) {
      best_count = count;
      best_anchor = start;
      best_t = t; best_l = l; best_b = b; best_r = r;
    }
  }
  if (best_count == 0) return std::nullopt;

  int bh = best_b - best_t + 1, bw = best_r - best_l + 1;
  int side = std::max(bh, bw);
  side = std::min(side, std::min(H, W));
  double cy = best_t + (bh - 1) * 0.5, cx = best_l + (bw - 1) * 0.5;
  int top = int(std::lround(cy - (side - 1) * 0.5));
  int left = int(std::lround(cx - (side - 1) * 0.5));
  top = std::clamp(top, 0, H - side);
  left = std::clamp(left, 0, W - side);
  return ObjectBox{top, left, side};
}

FgBgPair split_fg_bg(const LabeledImage& image, std::optional<ObjectBox> box) {
  int H = image.side;
  ObjectBox b;
  if (box) {
    b = *box;
  } else {
    int side = int(std::ceil(0.6 * H));
    b = ObjectBox{(H - side) / 2, (H - side) / 2, side};
  }
  FgBgPair pair;
  pair.box = b;
  pair.background = image;
  pair.foreground.side = b.side;
  pair.foreground.pix.assign(size_t(3) * b.side * b.side, 0.0);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < b.side; ++y)
      for (int x = 0; x < b.side; ++x)
        pair.foreground.at(c, y, x) = image.at(c, b.top + y, b.left + x);
  return pair;
}

LabeledImage recompose(const FgBgPair& pair) {
  LabeledImage out = pair.background;
  const ObjectBox& b = pair.box;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < b.side; ++y)
      for (int x = 0; x < b.side; ++x)
        out.at(c, b.top + y, b.left + x) = pair.foreground.at(c, y, x);
  return out;
}

FgBgPair locate_and_split(Encoder& enc, const LabeledImage& image, double tau,
                          const std::vector<double>* cam_weights, ObjectBox* out_box, int block) {
  FeatureMap map;
  if (block >= 0 && block < enc.config().blocks - 1) {
    Encoder::Cache cache;
    enc.encode_map(image, &cache);
    const Tensor& t = cache.relu_out[size_t(block)];
    map.channels = t.shape()[0];
    map.h = t.shape()[1];
    map.w = t.shape()[2];
    map.v = t.raw();
  } else {
    map = enc.encode_map(image);
  }
  ActivationMap act =
      cam_weights ? cam_weighted(map, *cam_weights, image.side) : cam(map, image.side);
  auto mask = auto_threshold(act, tau);
  auto box = largest_component_box(mask, image.side, image.side);
  if (out_box && box) *out_box = *box;
  if (out_box && !box) *out_box = ObjectBox{0, 0, 0};
  return split_fg_bg(image, box);
}

}  // namespace st
