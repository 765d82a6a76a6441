#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "st/checkpoint.hpp"
#include "st/eval.hpp"
#include "st/objective.hpp"
#include "st/trainer.hpp"

using namespace st;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config(const std::string& out_dir) {
  TrainConfig cfg;
  cfg.way = 3;
  cfg.shot = 1;
  cfg.queries_per_class = 3;
  cfg.alpha = 2;
  cfg.episodes = 3;
  cfg.seed = 5;
  cfg.image_side = 16;
  cfg.encoder_width = 6;
  cfg.encoder_blocks = 2;
  cfg.val_every = 0;
  cfg.source = DomainSpec{"src", "synth:A:0", "train", 16, 6};
  cfg.out_dir = out_dir;
  return cfg;
}

fs::path tmp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("st_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("config json round trip and unknown-key rejection") {
  TrainConfig cfg = tiny_config("x");
  cfg.head = "matching";
  cfg.lambda = 0.25;
  TrainConfig back = config_from_json(config_to_json(cfg));
  CHECK(config_to_json(back) == config_to_json(cfg));
  CHECK(config_fingerprint(back) == config_fingerprint(cfg));

  TrainConfig other = cfg;
  other.alpha += 1;
  CHECK(config_fingerprint(other) != config_fingerprint(cfg));

  nlohmann::json bad{{"wai", 5}};
  CHECK_THROWS_WITH_AS(config_from_json(bad), doctest::Contains("wai"), std::runtime_error);
}

TEST_CASE("checkpoint archive round trips tensors and manifest") {
  fs::path dir = tmp_dir("ckpt");
  Checkpoint ck;
  ck.manifest_json = R"({"note":"hello","n":3})";
  Tensor t({2, 3});
  for (long i = 0; i < 6; ++i) t[size_t(i)] = 0.5 * i - 1.0;
  ck.tensors.add("a.w", t);
  ck.tensors.add("a.stat", Tensor({2}), /*trainable=*/false);
  std::string path = (dir / "test.ckpt").string();
  save_checkpoint(path, ck);
  Checkpoint back = load_checkpoint(path);
  CHECK(nlohmann::json::parse(back.manifest_json) == nlohmann::json::parse(ck.manifest_json));
  CHECK(params_equal(back.tensors, ck.tensors));
  CHECK_FALSE(back.tensors.trainable("a.stat"));
  CHECK_THROWS_AS(load_checkpoint((dir / "missing.ckpt").string()), std::runtime_error);
}

TEST_CASE("baseline trainer episode matches a hand-built forward pass") {
  fs::path dir = tmp_dir("baseline");
  TrainConfig cfg = tiny_config(dir.string());
  cfg.td_enabled = false;
  cfg.wsol_rot = cfg.wsol_exc_rot = cfg.whole_rot = false;
  Trainer trainer(cfg);

  // independent recomputation of the first episode's loss
  Model ref = Model::create(cfg);
  RngStream samp = derived_stream(cfg.seed, 0, 0);
  Collection coll = load_split(cfg.source, "train", cfg);
  Episode ep = sample_episode(coll, cfg.way, cfg.shot, cfg.queries_per_class, samp);
  std::vector<Embedding> s_embs, q_embs;
  std::vector<int> s_labels, q_labels;
  for (const auto& im : ep.support) {
    s_embs.push_back(pool(ref.encoder.encode_map(im, nullptr, true)));
    s_labels.push_back(im.class_id);
  }
  for (const auto& im : ep.query) {
    q_embs.push_back(pool(ref.encoder.encode_map(im, nullptr, true)));
    q_labels.push_back(im.class_id);
  }
  double expect = fewshot_nll(q_embs, q_labels, prototypes(s_embs, s_labels, cfg.way), true);

  Trainer::EpisodeStats stats = trainer.train_episode(0);
  CHECK(std::abs(stats.loss_fs - expect) < 1e-6);
  CHECK_FALSE(stats.skipped);
}

TEST_CASE("td with alpha=0 matches the no-td baseline parameter for parameter") {
  fs::path dir = tmp_dir("alpha0");
  TrainConfig a = tiny_config((dir / "a").string());
  a.td_enabled = true;
  a.alpha = 0;
  a.wsol_rot = a.wsol_exc_rot = a.whole_rot = false;
  TrainConfig b = tiny_config((dir / "b").string());
  b.td_enabled = false;
  b.wsol_rot = b.wsol_exc_rot = b.whole_rot = false;

  Trainer ta(a), tb(b);
  for (int ep = 0; ep < 3; ++ep) {
    ta.train_episode(ep);
    tb.train_episode(ep);
  }
  CHECK(params_equal(ta.model().snapshot(), tb.model().snapshot()));
}

TEST_CASE("outer parameters change every successful episode") {
  fs::path dir = tmp_dir("change");
  Trainer trainer(tiny_config(dir.string()));
  ParamState prev = trainer.model().snapshot();
  for (int ep = 0; ep < 2; ++ep) {
    Trainer::EpisodeStats s = trainer.train_episode(ep);
    REQUIRE_FALSE(s.skipped);
    ParamState now = trainer.model().snapshot();
    CHECK_FALSE(params_equal(now, prev));
    prev = std::move(now);
  }
}

TEST_CASE("training is deterministic per seed") {
  fs::path dir = tmp_dir("det");
  TrainConfig cfg = tiny_config(dir.string());
  Trainer t1(cfg), t2(cfg);
  for (int ep = 0; ep < 2; ++ep) {
    Trainer::EpisodeStats a = t1.train_episode(ep);
    Trainer::EpisodeStats b = t2.train_episode(ep);
    CHECK(a.loss_fs == b.loss_fs);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.inner_final_loss == b.inner_final_loss);
  }
  CHECK(params_equal(t1.model().snapshot(), t2.model().snapshot()));
}

TEST_CASE("checkpoint resume reproduces the uninterrupted run exactly") {
  fs::path dir = tmp_dir("resume");
  TrainConfig full = tiny_config((dir / "full").string());
  full.episodes = 6;
  Trainer tfull(full);
  tfull.train();

  TrainConfig part = tiny_config((dir / "part").string());
  part.episodes = 3;
  Trainer tpart(part);
  tpart.train();

  TrainConfig rest = tiny_config((dir / "rest").string());
  rest.episodes = 6;
  rest.init_checkpoint = (dir / "part" / "last.ckpt").string();
  Trainer trest(rest);
  CHECK(trest.next_episode() == 3);
  trest.train();

  CHECK(params_equal(tfull.model().snapshot(), trest.model().snapshot()));

  // subsequent episode losses are identical too
  Trainer::EpisodeStats sa = tfull.train_episode(6);
  Trainer::EpisodeStats sb = trest.train_episode(6);
  CHECK(sa.loss_fs == sb.loss_fs);
}

TEST_CASE("train writes one metrics line per episode plus checkpoints") {
  fs::path dir = tmp_dir("metrics");
  TrainConfig cfg = tiny_config(dir.string());
  cfg.episodes = 1;
  Trainer trainer(cfg);
  trainer.train();
  std::ifstream in((dir / "metrics.jsonl").string());
  REQUIRE(in.good());
  int lines = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) {
      auto j = nlohmann::json::parse(line);
      CHECK(j.contains("episode"));
      ++lines;
    }
  CHECK(lines == 1);
  CHECK(fs::exists(dir / "last.ckpt"));
}

TEST_CASE("validation runs on the held-out split and tracks the best checkpoint") {
  fs::path dir = tmp_dir("val");
  TrainConfig cfg = tiny_config(dir.string());
  cfg.episodes = 2;
  cfg.val_every = 2;
  cfg.val_episodes = 2;
  Trainer trainer(cfg);
  REQUIRE(trainer.val_collection().has_value());
  CHECK(trainer.val_collection()->classes.size() == 3);
  trainer.train();
  CHECK(trainer.best_val() >= 0.0);
  CHECK(fs::exists(dir / "best.ckpt"));
}

TEST_CASE("evaluate: reproducible, correct CI formula, report fields") {
  fs::path dir = tmp_dir("eval");
  TrainConfig cfg = tiny_config(dir.string());
  Model model = Model::create(cfg);
  Collection target = load_split(DomainSpec{"tgt", "synth:B:0", "test", 16, 6}, "test", cfg);

  EvalReport a = evaluate(model, target, cfg, 8, 99, 0, "", "synthB");
  EvalReport b = evaluate(model, target, cfg, 8, 99, 0);
  CHECK(a.per_episode == b.per_episode);
  CHECK(a.domain == "synthB");
  CHECK(a.episodes == 8);
  CHECK(a.config_fingerprint == config_fingerprint(cfg));

  double mean = 0;
  for (double v : a.per_episode) mean += v;
  mean /= a.per_episode.size();
  double ss = 0;
  for (double v : a.per_episode) ss += (v - mean) * (v - mean);
  double ci = 1.96 * std::sqrt(ss / (a.per_episode.size() - 1)) / std::sqrt(8.0);
  CHECK(a.mean_accuracy == doctest::Approx(mean).epsilon(1e-12));
  CHECK(a.ci95 == doctest::Approx(ci).epsilon(1e-12));
}

TEST_CASE("sweep_alpha produces one report per alpha; alpha=0 equals plain eval") {
  fs::path dir = tmp_dir("sweep");
  TrainConfig cfg = tiny_config(dir.string());
  Model model = Model::create(cfg);
  Collection target = load_split(DomainSpec{"tgt", "synth:B:0", "test", 16, 6}, "test", cfg);
  auto points = sweep_alpha(model, target, cfg, {0, 1}, 4, 7);
  REQUIRE(points.size() == 2);
  CHECK(points[0].alpha == 0);
  EvalReport plain = evaluate(model, target, cfg, 4, 7, 0);
  CHECK(points[0].report.per_episode == plain.per_episode);
}

TEST_CASE("embedding dump emits one line per support and query sample") {
  fs::path dir = tmp_dir("dump");
  TrainConfig cfg = tiny_config(dir.string());
  Model model = Model::create(cfg);
  Collection target = load_split(DomainSpec{"tgt", "synth:B:0", "test", 16, 6}, "test", cfg);
  std::string dump = (dir / "emb.jsonl").string();
  evaluate(model, target, cfg, 2, 3, 0, dump);
  std::ifstream in(dump);
  int support_lines = 0, query_lines = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    CHECK(j["embedding"].size() == size_t(cfg.encoder_width));
    CHECK(j.contains("label"));
    if (j["kind"] == "support") ++support_lines;
    if (j["kind"] == "query") ++query_lines;
  }
  CHECK(support_lines == 2 * cfg.way * cfg.shot);
  CHECK(query_lines == 2 * cfg.way * cfg.queries_per_class);
}

TEST_CASE("model load errors name the problem") {
  fs::path dir = tmp_dir("loaderr");
  CHECK_THROWS_WITH_AS(load_model((dir / "nope.ckpt").string()), doctest::Contains("nope.ckpt"),
                       std::runtime_error);
}
