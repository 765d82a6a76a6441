#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "st/data.hpp"
#include "st/tensor.hpp"

namespace st {

struct FeatureMap {
  int channels = 0, h = 0, w = 0;
  std::vector<double> v;
  double at(int d, int y, int x) const { return v[size_t((d * h + y) * w + x)]; }
  double& at(int d, int y, int x) { return v[size_t((d * h + y) * w + x)]; }
};

struct Embedding {
  std::vector<double> v;
};

struct ParamEntry {
  std::string name;
  Tensor value;
  bool trainable = true;
};

// Ordered, named parameter snapshot. Copying it is a deep clone.
class ParamState {
 public:
  void add(const std::string& name, std::vector<int> shape, bool trainable = true);
  void add(const std::string& name, Tensor value, bool trainable = true);
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool trainable(const std::string& name) const;

  std::vector<ParamEntry>& entries() { return entries_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }

  void zero_all();
  // Same names, shapes and flags, all values zero.
  static ParamState zeros_like(const ParamState& other);
  // Appends every entry of src with a prefix on the name.
  void merge(const ParamState& src, const std::string& prefix);

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

ParamState clone_params(const ParamState& src);
// Overwrites every entry of dst from src; throws naming the offending key
// on a missing name or a shape mismatch.
void load_params(ParamState& dst, const ParamState& src);
bool params_equal(const ParamState& a, const ParamState& b);

struct EncoderConfig {
  std::string tier = "conv4";
  int width = 64;
  int blocks = 4;
  int in_channels = 3;
  int expected_side = 0;  // 0 = accept any input side
};

// Conv encoder: per block 3x3 conv (stride 1, pad 1), per-channel
// running-stat normalization, ReLU, 2x2 average pool. Produces spatial
// feature maps; pooled embeddings come from pool() below.
class Encoder {
 public:
  Encoder(EncoderConfig cfg, uint64_t init_seed);
  Encoder(EncoderConfig cfg, ParamState params);

  const EncoderConfig& config() const { return cfg_; }
  ParamState& params() { return params_; }
  const ParamState& params() const { return params_; }
  int feature_dim() const { return cfg_.width; }
  int map_side(int input_side) const;

  struct Cache {
    std::vector<Tensor> block_in;  // conv input per block (C,h,w)
    std::vector<Tensor> xhat;      // normalized activations per block
    std::vector<Tensor> relu_out;  // post-ReLU, pre-pool per block
  };

  // update_stats refreshes the per-channel running mean/var from this
  // forward pass (outer training only; frozen during inner adaptation
  // and evaluation).
  FeatureMap encode_map(const LabeledImage& image, Cache* cache = nullptr,
                        bool update_stats = false);

  // Accumulates parameter gradients for one image into grads (a
  // zeros_like of params()).
  void backward(const Cache& cache, const FeatureMap& dmap, ParamState& grads) const;

 private:
  EncoderConfig cfg_;
  ParamState params_;
  void validate_arch() const;
};

Embedding pool(const FeatureMap& map);
// Spreads a gradient w.r.t. the pooled embedding back over the map.
FeatureMap pool_backward(const std::vector<double>& dembed, const FeatureMap& map);

}  // namespace st
