#include "st/model.hpp"

#include <stdexcept>

namespace st {

Model Model::create(const TrainConfig& cfg) {
  EncoderConfig ec;
  ec.tier = cfg.encoder_tier;
  ec.width = cfg.encoder_width;
  ec.blocks = cfg.encoder_blocks;
  Encoder enc(ec, derived_stream(cfg.seed, 11, 1).next_u64());
  Model m{cfg.head, std::move(enc), std::nullopt};
  if (cfg.head == "relation") {
    int rel_c = std::max(8, cfg.encoder_width / 4);
    m.relation.emplace(cfg.encoder_width, rel_c,
                       derived_stream(cfg.seed, 12, 1).next_u64());
  }
  return m;
}

ParamState Model::snapshot() const {
  ParamState s;
  s.merge(encoder.params(), "enc.");
  if (relation) s.merge(relation->params(), "rel.");
  return s;
}

void Model::load_snapshot(const ParamState& state) {
  ParamState enc_part, rel_part;
  for (const ParamEntry& e : state.entries()) {
    if (e.name.rfind("enc.", 0) == 0)
      enc_part.add(e.name.substr(4), e.value, e.trainable);
    else if (e.name.rfind("rel.", 0) == 0)
      rel_part.add(e.name.substr(4), e.value, e.trainable);
    else
      throw std::runtime_error("model snapshot: unexpected tensor '" + e.name + "'");
  }
  load_params(encoder.params(), enc_part);
  if (relation) load_params(relation->params(), rel_part);
  else if (rel_part.size() > 0)
    throw std::runtime_error("model snapshot: relation tensors but head is " + head);
}

}  // namespace st
