#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "st/eval.hpp"
#include "st/trainer.hpp"
#include "st/wsol.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace st;

namespace {

cv::Mat to_mat(const LabeledImage& im) {
  cv::Mat m(im.side, im.side, CV_8UC3);
  for (int y = 0; y < im.side; ++y)
    for (int x = 0; x < im.side; ++x) {
      auto q = [&](int c) { return uchar(std::clamp(im.at(c, y, x), 0.0, 1.0) * 255.0 + 0.5); };
      m.at<cv::Vec3b>(y, x) = cv::Vec3b(q(2), q(1), q(0));  // BGR
    }
  return m;
}

// Maps an eval-domain name to a spec: synthA/synthB/synthC shorthands
// reuse the training root's dataset seed and sizes; anything else is a
// root string (synth:... or a directory).
DomainSpec parse_domain(const std::string& name, const TrainConfig& cfg) {
  DomainSpec d = cfg.source;
  d.name = name;
  d.split = "test";
  if (name.size() == 6 && name.rfind("synth", 0) == 0) {
    std::string seed = "0";
    if (cfg.source.root.rfind("synth:", 0) == 0) {
      size_t p = cfg.source.root.find(':', 6);
      if (p != std::string::npos) seed = cfg.source.root.substr(p + 1);
    }
    d.root = std::string("synth:") + name[5] + ":" + seed;
  } else {
    d.root = name;
  }
  return d;
}

void add_config_options(CLI::App* cmd, TrainConfig& cfg, std::string& config_path) {
  cmd->add_option("--config", config_path, "JSON config file (flags override its values)");
  cmd->add_option("--way", cfg.way);
  cmd->add_option("--shot", cfg.shot);
  cmd->add_option("--queries-per-class", cfg.queries_per_class);
  cmd->add_option("--alpha", cfg.alpha);
  cmd->add_option("--lambda", cfg.lambda);
  cmd->add_option("--inner-lr", cfg.inner_lr);
  cmd->add_option("--inner-momentum", cfg.inner_momentum);
  cmd->add_option("--m-prime", cfg.m_prime);
  cmd->add_option("--rot-hidden", cfg.rot_hidden);
  cmd->add_option("--outer-lr", cfg.outer_lr);
  cmd->add_option("--episodes", cfg.episodes);
  cmd->add_option("--seed", cfg.seed);
  cmd->add_option("--head", cfg.head)->check(CLI::IsMember({"proto", "matching", "relation"}));
  cmd->add_flag("--wsol-rot,!--no-wsol-rot", cfg.wsol_rot);
  cmd->add_flag("--wsol-exc-rot,!--no-wsol-exc-rot", cfg.wsol_exc_rot);
  cmd->add_flag("--whole-rot,!--no-whole-rot", cfg.whole_rot);
  cmd->add_flag("--td,!--no-td", cfg.td_enabled);
  cmd->add_option("--g-self", cfg.g_self);
  cmd->add_option("--g-exch", cfg.g_exch);
  cmd->add_option("--tau", cfg.tau);
  cmd->add_option("--p-rc", cfg.p_rc);
  cmd->add_flag("--cam-weighted,!--no-cam-weighted", cfg.cam_weighted);
  cmd->add_flag("--squared-distance,!--no-squared-distance", cfg.squared_distance);
  cmd->add_option("--image-side", cfg.image_side);
  cmd->add_option("--encoder-width", cfg.encoder_width);
  cmd->add_option("--encoder-blocks", cfg.encoder_blocks);
  cmd->add_option("--encoder-tier", cfg.encoder_tier);
  cmd->add_option("--val-every", cfg.val_every);
  cmd->add_option("--val-episodes", cfg.val_episodes);
  cmd->add_option("--source-root", cfg.source.root);
  cmd->add_option("--source-split", cfg.source.split);
  cmd->add_option("--source-classes", cfg.source.n_classes);
  cmd->add_option("--source-images-per-class", cfg.source.images_per_class);
  cmd->add_option("--out-dir", cfg.out_dir);
  cmd->add_option("--init-checkpoint", cfg.init_checkpoint);
  cmd->add_option("--eval-episodes", cfg.eval_episodes);
  cmd->add_option("--eval-alpha", cfg.eval_alpha);
}

// The config file must be applied before CLI overrides, so it is pulled
// out of argv ahead of the real parse.
TrainConfig preload_config(int argc, char** argv) {
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--config") return load_config_file(argv[i + 1]);
  return TrainConfig{};
}

void write_text(const std::string& path, const std::string& text) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

int run_train(const TrainConfig& cfg, bool no_resume) {
  Trainer trainer(cfg, !no_resume);
  trainer.train();
  std::cout << "trained " << trainer.next_episode() << " episodes; checkpoints in "
            << cfg.out_dir << "\n";
  return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& domain, int episodes,
             uint64_t seed, int alpha, bool no_td, const std::string& out_path,
             const std::string& dump_path) {
  TrainConfig cfg;
  Model model = load_model(ckpt_path, &cfg);
  if (no_td) cfg.td_enabled = false;
  DomainSpec target = parse_domain(domain, cfg);
  Collection coll = load_split(target, target.split, cfg);
  EvalReport rep = evaluate(model, coll, cfg, episodes, seed, alpha, dump_path, domain);
  std::string text = report_to_json(rep).dump(2) + "\n";
  if (!out_path.empty()) write_text(out_path, text);
  std::cout << "domain " << domain << ": accuracy " << rep.mean_accuracy << " +/- " << rep.ci95
            << " over " << rep.episodes << " episodes\n";
  if (out_path.empty()) std::cout << text;
  return 0;
}

int run_sweep(const std::string& ckpt_path, const std::string& domain,
              const std::vector<int>& alphas, int episodes, uint64_t seed,
              const std::string& out_prefix) {
  TrainConfig cfg;
  Model model = load_model(ckpt_path, &cfg);
  DomainSpec target = parse_domain(domain, cfg);
  Collection coll = load_split(target, target.split, cfg);
  std::vector<AlphaPoint> points = sweep_alpha(model, coll, cfg, alphas, episodes, seed);

  std::ostringstream csv;
  csv << "alpha,mean_accuracy,ci95,episodes\n";
  json jpoints = json::array();
  for (const AlphaPoint& p : points) {
    csv << p.alpha << "," << p.report.mean_accuracy << "," << p.report.ci95 << ","
        << p.report.episodes << "\n";
    json jr = report_to_json(p.report);
    jr["alpha"] = p.alpha;
    jr.erase("per_episode");
    jpoints.push_back(jr);
    std::cout << "alpha " << p.alpha << ": " << p.report.mean_accuracy << " +/- " << p.report.ci95
              << "\n";
  }
  write_text(out_prefix + ".csv", csv.str());
  write_text(out_prefix + ".json", json{{"domain", domain}, {"points", jpoints}}.dump(2) + "\n");
  return 0;
}

struct AblateRow {
  const char* name;
  bool whole_rot, wsol_rot, wsol_exc_rot, td;
};

int run_ablate(TrainConfig base, const std::string& target_domain,
               const std::vector<uint64_t>& seeds, const std::string& out_path) {
  static const AblateRow rows[] = {
      {"baseline", false, false, false, false},
      {"whole_rot", true, false, false, false},
      {"wsol_rot", false, true, false, false},
      {"wsol_exc_rot", false, false, true, false},
      {"te_full", false, true, true, false},
      {"whole_rot+td", true, false, false, true},
      {"wsol_rot+td", false, true, false, true},
      {"wsol_exc_rot+td", false, false, true, true},
      {"st_full", false, true, true, true},
  };
  std::ostringstream csv;
  csv << "row,seed,mean_accuracy,ci95\n";
  json jrows = json::array();
  for (const AblateRow& row : rows) {
    for (uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.whole_rot = row.whole_rot;
      cfg.wsol_rot = row.wsol_rot;
      cfg.wsol_exc_rot = row.wsol_exc_rot;
      cfg.td_enabled = row.td;
      cfg.seed = seed;
      cfg.out_dir = base.out_dir + "/" + row.name + "_s" + std::to_string(seed);
      cfg.init_checkpoint.clear();
      Trainer trainer(cfg);
      trainer.train();
      DomainSpec target = parse_domain(target_domain, cfg);
      Collection coll = load_split(target, target.split, cfg);
      EvalReport rep = evaluate(trainer.model(), coll, cfg, cfg.eval_episodes,
                                mix_seed(seed, 424243), -1, "", target_domain);
      csv << row.name << "," << seed << "," << rep.mean_accuracy << "," << rep.ci95 << "\n";
      jrows.push_back(json{{"row", row.name},
                           {"seed", seed},
                           {"mean_accuracy", rep.mean_accuracy},
                           {"ci95", rep.ci95}});
      std::cout << row.name << " seed " << seed << ": " << rep.mean_accuracy << " +/- "
                << rep.ci95 << "\n";
    }
  }
  write_text(out_path + ".csv", csv.str());
  write_text(out_path + ".json", json{{"rows", jrows}}.dump(2) + "\n");
  return 0;
}

int run_wsol_viz(const std::string& ckpt_path, const TrainConfig& cli_cfg,
                 const std::string& domain, int count, uint64_t seed,
                 const std::string& out_dir) {
  TrainConfig cfg = cli_cfg;
  Model model = ckpt_path.empty() ? Model::create(cfg) : load_model(ckpt_path, &cfg);
  DomainSpec target = parse_domain(domain, cfg);
  Collection coll = load_split(target, target.split, cfg);
  fs::create_directories(out_dir);
  RngStream rng = derived_stream(seed, 31, 0);
  for (int i = 0; i < count; ++i) {
    const ClassGroup& cg = coll.classes[size_t(rng.uniform_int(int(coll.classes.size())))];
    const LabeledImage& im = cg.images[size_t(rng.uniform_int(int(cg.images.size())))];
    FeatureMap fm = model.encoder.encode_map(im);
    ActivationMap act = cam(fm, im.side);
    ObjectBox box;
    locate_and_split(model.encoder, im, cfg.tau, nullptr, &box);

    cv::Mat base = to_mat(im);
    double mx = 1e-12;
    for (double v : act.upsampled) mx = std::max(mx, v);
    for (int y = 0; y < im.side; ++y)
      for (int x = 0; x < im.side; ++x) {
        double h = act.upsampled[size_t(y) * im.side + x] / mx;
        cv::Vec3b& px = base.at<cv::Vec3b>(y, x);
        px[2] = uchar(std::min(255.0, px[2] * 0.5 + 255.0 * h * 0.5));  // red heat
      }
    cv::rectangle(base, cv::Rect(box.left, box.top, box.side, box.side), cv::Scalar(0, 255, 0), 1);
    if (im.gt_box)
      cv::rectangle(base, cv::Rect(im.gt_box->left, im.gt_box->top, im.gt_box->width,
                                   im.gt_box->height),
                    cv::Scalar(255, 0, 0), 1);
    cv::imwrite(out_dir + "/wsol_" + std::to_string(i) + ".png", base);
  }
  std::cout << "wrote " << count << " overlays to " << out_dir << "\n";
  return 0;
}

int run_expand_viz(const std::string& ckpt_path, const TrainConfig& cli_cfg,
                   const std::string& domain, uint64_t seed, const std::string& out_path) {
  TrainConfig cfg = cli_cfg;
  Model model = ckpt_path.empty() ? Model::create(cfg) : load_model(ckpt_path, &cfg);
  DomainSpec target = parse_domain(domain, cfg);
  Collection coll = load_split(target, target.split, cfg);
  RngStream ep_rng = derived_stream(seed, 32, 0);
  Episode ep = sample_episode(coll, cfg.way, cfg.shot, cfg.queries_per_class, ep_rng);
  RngStream ex_rng = derived_stream(seed, 32, 1);
  ExpandedSupportSet sprime = expand_support(model, ep.support, cfg, ex_rng);

  int per_class = 0;
  for (const auto& v : sprime.by_class) per_class = std::max(per_class, int(v.size()));
  int side = cfg.image_side;
  cv::Mat grid(int(sprime.by_class.size()) * side, per_class * side, CV_8UC3,
               cv::Scalar(32, 32, 32));
  for (size_t c = 0; c < sprime.by_class.size(); ++c)
    for (size_t k = 0; k < sprime.by_class[c].size(); ++k) {
      cv::Mat cell = to_mat(sprime.samples[size_t(sprime.by_class[c][k])].image);
      cell.copyTo(grid(cv::Rect(int(k) * side, int(c) * side, side, side)));
    }
  fs::path p(out_path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  cv::imwrite(out_path, grid);
  std::cout << "wrote S' grid (" << sprime.samples.size() << " samples) to " << out_path << "\n";
  return 0;
}

int run_synth_export(const std::string& family, uint64_t seed, int classes, int per_class,
                     int side, const std::string& split, const std::string& out_dir) {
  Collection coll = generate_synthetic_domain(seed, classes, per_class, family, side);
  if (split != "all") coll = split_classes(coll, split);
  export_collection(coll, out_dir);
  std::cout << "exported " << coll.classes.size() << " classes to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-domain few-shot learning with task expansion and decomposition"};
  app.require_subcommand(1);

  TrainConfig cfg;
  try {
    cfg = preload_config(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::string config_path;

  auto* train = app.add_subcommand("train", "episodic training");
  add_config_options(train, cfg, config_path);
  bool no_resume = false;
  train->add_flag("--no-resume", no_resume,
                  "take only weights from --init-checkpoint, not counters");

  std::string ckpt, domain = "synthB", out_path, dump_path;
  int episodes = 600, count = 16;
  uint64_t eval_seed = 1;
  int eval_alpha = -1;

  bool eval_no_td = false;
  auto* eval = app.add_subcommand("eval", "episodic evaluation on a target domain");
  eval->add_option("--checkpoint", ckpt)->required();
  eval->add_option("--domain", domain);
  eval->add_option("--episodes", episodes);
  eval->add_option("--eval-seed", eval_seed);
  eval->add_option("--alpha", eval_alpha, "inner steps at test time (-1 = training value)");
  eval->add_flag("--no-td", eval_no_td, "skip test-time adaptation");
  eval->add_option("--out", out_path, "EvalReport JSON path");
  eval->add_option("--dump-embeddings", dump_path, "JSONL embedding export");

  std::vector<int> alphas{0, 2, 4, 6, 8};
  std::string sweep_prefix = "sweep_alpha";
  auto* sweep = app.add_subcommand("sweep-alpha", "evaluate across inner-step counts");
  sweep->add_option("--checkpoint", ckpt)->required();
  sweep->add_option("--domain", domain);
  sweep->add_option("--alphas", alphas)->delimiter(',');
  sweep->add_option("--episodes", episodes);
  sweep->add_option("--eval-seed", eval_seed);
  sweep->add_option("--out", sweep_prefix, "output prefix (.csv/.json)");

  std::vector<uint64_t> seeds{0, 1, 2};
  std::string ablate_out = "ablate";
  auto* ablate = app.add_subcommand("ablate", "component grid on the synthetic pair");
  add_config_options(ablate, cfg, config_path);
  ablate->add_option("--target-domain", domain);
  ablate->add_option("--seeds", seeds)->delimiter(',');
  ablate->add_option("--out", ablate_out, "output prefix (.csv/.json)");

  auto* wviz = app.add_subcommand("wsol-viz", "heatmap + box overlays");
  add_config_options(wviz, cfg, config_path);
  wviz->add_option("--checkpoint", ckpt);
  wviz->add_option("--domain", domain);
  wviz->add_option("--count", count);
  wviz->add_option("--eval-seed", eval_seed);
  std::string viz_out = "wsol_viz";
  wviz->add_option("--out", viz_out, "output directory");

  auto* eviz = app.add_subcommand("expand-viz", "expanded support set grid");
  add_config_options(eviz, cfg, config_path);
  eviz->add_option("--checkpoint", ckpt);
  eviz->add_option("--domain", domain);
  eviz->add_option("--eval-seed", eval_seed);
  std::string eviz_out = "expand_viz.png";
  eviz->add_option("--out", eviz_out, "output PNG");

  std::string family = "A", split = "all", export_dir = "synth_export";
  uint64_t synth_seed = 0;
  int n_classes = 16, per_class = 40, side = 84;
  auto* sexp = app.add_subcommand("synth-export", "write the synthetic dataset as PNGs");
  sexp->add_option("--family", family)->check(CLI::IsMember({"A", "B", "C"}));
  sexp->add_option("--seed", synth_seed);
  sexp->add_option("--classes", n_classes);
  sexp->add_option("--per-class", per_class);
  sexp->add_option("--side", side);
  sexp->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test", "all"}));
  sexp->add_option("--out", export_dir);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (train->parsed()) return run_train(cfg, no_resume);
    if (eval->parsed())
      return run_eval(ckpt, domain, episodes, eval_seed, eval_alpha, eval_no_td, out_path,
                      dump_path);
    if (sweep->parsed()) return run_sweep(ckpt, domain, alphas, episodes, eval_seed, sweep_prefix);
    if (ablate->parsed()) return run_ablate(cfg, domain, seeds, ablate_out);
    if (wviz->parsed()) return run_wsol_viz(ckpt, cfg, domain, count, eval_seed, viz_out);
    if (eviz->parsed()) return run_expand_viz(ckpt, cfg, domain, eval_seed, eviz_out);
    if (sexp->parsed())
      return run_synth_export(family, synth_seed, n_classes, per_class, side, split, export_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
