// psganpp: training, transfer/removal, evaluation, fixture generation and the
// HTTP service from one executable.
//
// Exit codes: 0 ok, 1 usage or configuration error, 2 numerical abort.

#include "psgan/config.hpp"
#include "psgan/evalkit.hpp"
#include "psgan/inference.hpp"
#include "psgan/service.hpp"
#include "psgan/trainer.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>

namespace fs = std::filesystem;
using namespace psgan;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

/// Reads `path` if given and lays `overrides` (flag values) on top.
KeyValueConfig merged_config(const std::string& path, const std::map<std::string, std::string>& overrides) {
  KeyValueConfig kv = path.empty() ? KeyValueConfig{} : KeyValueConfig::read(path);
  for (const auto& [k, v] : overrides)
    if (!v.empty()) kv.set(k, v);
  return kv;
}

/// Registers one string flag per key; values land in `out[key]`.
void add_key_flags(CLI::App* cmd, const std::vector<std::string>& keys, std::map<std::string, std::string>& out,
                   const std::vector<std::string>& skip = {}) {
  for (const auto& k : keys) {
    if (std::find(skip.begin(), skip.end(), k) != skip.end()) continue;
    cmd->add_option(flag_name(k), out[k], "config key '" + k + "'");
  }
}

/// Resolves a face asset from an id in `manifest`, an asset-store directory
/// (image.png, parsing.png, landmarks.json) or a file prefix
/// (<p>.png, <p>_parsing.png, <p>_landmarks.json[, <p>_dense.json]).
FaceAsset resolve_asset(const std::string& ref, const std::optional<Manifest>& manifest) {
  if (manifest) {
    for (const auto& r : manifest->records)
      if (r.id == ref) return load_asset(r);
  }
  ManifestRecord r;
  const fs::path p(ref);
  if (fs::is_directory(p)) {
    r.id = p.filename().string();
    r.image_path = p / "image.png";
    r.parsing_path = p / "parsing.png";
    r.landmarks_path = p / "landmarks.json";
  } else {
    fs::path stem = p;
    if (stem.extension() == ".png") stem.replace_extension();
    r.id = stem.filename().string();
    r.image_path = stem.string() + ".png";
    r.parsing_path = stem.string() + "_parsing.png";
    r.landmarks_path = stem.string() + "_landmarks.json";
    if (fs::exists(stem.string() + "_dense.json")) r.dense_path = stem.string() + "_dense.json";
  }
  if (!fs::exists(r.image_path))
    throw AssetError(ref, manifest ? "not in the manifest and no image at " + r.image_path.string()
                                   : "no image at " + r.image_path.string());
  return load_asset(r);
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config, manifest, out, resume;
  std::map<std::string, std::string> keys;
};

int cmd_train(const TrainArgs& a) {
  if (a.manifest.empty() || a.out.empty()) throw UsageError("train needs --manifest and --out");
  KeyValueConfig kv = merged_config(a.config, {});
  if (const char* env = std::getenv("PSGANPP_SEED")) kv.set("seed", env);
  for (const auto& [k, v] : a.keys)
    if (!v.empty()) kv.set(k, v);
  train::TrainConfig cfg = train::apply_config(kv);
  cfg.validate();
  train::Trainer trainer(train::Corpus::load(a.manifest), cfg);
  std::optional<fs::path> resume;
  if (!a.resume.empty()) resume = a.resume;
  const auto result = train::train_loop(trainer, a.out, resume, &std::cerr);
  std::cout << "trained " << result.steps << " steps; checkpoint " << result.final_checkpoint.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// transfer / remove

struct TransferArgs {
  std::string config, checkpoint, source, manifest, out, video_dir, dump_attention;
  std::vector<std::string> references, regions;
  std::optional<double> alpha;
  bool remove = false;
  bool blend_bg = false;
  int attention_pixel = -1;
  std::map<std::string, std::string> keys;  // config-file equivalents
};

const std::vector<std::string>& transfer_keys() {
  static const std::vector<std::string> keys = {"checkpoint", "source", "references", "manifest", "alpha",
                                                "regions",    "remove", "video_dir",  "blend_bg", "out",
                                                "w_visual",   "dump_attention", "attention_pixel"};
  return keys;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_transfer(TransferArgs a, bool alias_remove) {
  double w_visual = infer::kDefaultVisualWeight;
  if (!a.config.empty()) {
    const KeyValueConfig kv = KeyValueConfig::read(a.config);
    kv.require_known(transfer_keys());
    auto fill = [&](std::string& dst, const char* key) {
      if (dst.empty()) dst = kv.get_string(key, "");
    };
    fill(a.checkpoint, "checkpoint");
    fill(a.source, "source");
    fill(a.manifest, "manifest");
    fill(a.out, "out");
    fill(a.video_dir, "video_dir");
    fill(a.dump_attention, "dump_attention");
    if (a.references.empty()) a.references = split_list(kv.get_string("references", ""));
    if (a.regions.empty()) a.regions = split_list(kv.get_string("regions", ""));
    if (!a.alpha && kv.contains("alpha")) a.alpha = kv.get_double("alpha", 1.0);
    if (!a.remove) a.remove = kv.get_bool("remove", false);
    if (!a.blend_bg) a.blend_bg = kv.get_bool("blend_bg", false);
    if (a.attention_pixel < 0) a.attention_pixel = int(kv.get_long("attention_pixel", -1));
    w_visual = kv.get_double("w_visual", w_visual);
  }
  if (!a.keys["w_visual"].empty()) {
    KeyValueConfig flag;
    flag.set("w_visual", a.keys["w_visual"]);
    w_visual = flag.get_double("w_visual", w_visual);
  }
  if (alias_remove) a.remove = true;
  if (a.checkpoint.empty()) throw UsageError("--checkpoint is required");
  if (a.out.empty()) throw UsageError("--out is required");
  if (a.video_dir.empty() && a.source.empty()) throw UsageError("--source is required");
  if (a.remove && a.alpha) throw UsageError("--remove cannot be combined with --alpha");
  if (a.remove && !a.regions.empty()) throw UsageError("--remove cannot be combined with --regions");
  if (a.remove && !a.references.empty()) {
    std::cerr << "note: --remove ignores --reference\n";
    a.references.clear();
  }
  if (!a.remove && a.references.empty()) throw UsageError("transfer needs --reference (or use --remove)");
  if (a.remove && !a.video_dir.empty()) throw UsageError("--video-dir works with transfer only");

  std::optional<Manifest> manifest;
  if (!a.manifest.empty()) manifest = read_manifest(a.manifest);
  const infer::Bundle bundle = nn::load_checkpoint(a.checkpoint);
  std::vector<FaceAsset> refs;
  for (const auto& r : a.references) refs.push_back(resolve_asset(r, manifest));

  if (!a.video_dir.empty()) {
    if (refs.size() != 1) throw UsageError("video mode takes exactly one reference");
    const auto frames = infer::read_frames(a.video_dir);
    const auto results = infer::video_transfer(frames, refs[0], bundle, a.blend_bg, float(w_visual));
    fs::create_directories(a.out);
    int written = 0;
    for (const auto& r : results) {
      if (!r.image) {
        std::cerr << "warning: " << r.warning << "\n";
        continue;
      }
      write_image_png(*r.image, fs::path(a.out) / (r.id + ".png"));
      ++written;
    }
    std::cout << "wrote " << written << " of " << results.size() << " frames to " << a.out << "\n";
    return kExitOk;
  }

  const FaceAsset source = resolve_asset(a.source, manifest);
  infer::TransferSpec spec;
  spec.remove = a.remove;
  for (const auto& r : refs) spec.references.push_back(&r);
  if (a.alpha) spec.alpha = float(*a.alpha);
  if (!a.regions.empty()) {
    std::vector<std::string> names;
    for (const auto& r : a.regions)
      for (const auto& n : split_list(r)) names.push_back(n);
    spec.regions = infer::parse_regions(names);
  }
  try {
    infer::validate_spec(spec);
  } catch (const infer::RequestError& e) {
    throw UsageError(e.what());
  }
  const ImageTensor out = infer::execute(bundle, source, spec, float(w_visual));
  ensure_parent(a.out);
  write_image_png(out, a.out);

  if (!a.dump_attention.empty() && !a.remove) {
    const auto att = infer::attention_matrix(bundle, source, refs[0], float(w_visual));
    const int side = bundle.arch.bottleneck_size();
    int pixel = a.attention_pixel;
    if (pixel < 0) {  // first valid row
      for (std::size_t i = 0; i < att.valid.size(); ++i)
        if (att.valid[i]) {
          pixel = int(i);
          break;
        }
    }
    if (pixel < 0) throw UsageError("no valid attention row to dump");
    const auto row = infer::attention_row(att, pixel, side, side);
    fs::create_directories(a.dump_attention);
    const int scale = std::max(1, 256 / side);
    write_image_png(infer::heatmap(row.scores, side, side, scale),
                    fs::path(a.dump_attention) / ("row" + std::to_string(pixel) + "_scores.png"));
    write_image_png(infer::heatmap(row.weights, side, side, scale),
                    fs::path(a.dump_attention) / ("row" + std::to_string(pixel) + "_weights.png"));
  }
  std::cout << "wrote " << a.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const std::string& checkpoint, const std::string& manifest_path, const std::string& out,
             const std::string& embedder_name, double w_visual) {
  if (checkpoint.empty() || manifest_path.empty() || out.empty())
    throw UsageError("eval needs --checkpoint, --manifest and --out");
  const auto assets = load_assets(read_manifest(manifest_path));
  const infer::Bundle bundle = nn::load_checkpoint(checkpoint);
  const auto embedder = eval::make_embedder(embedder_name);
  const auto rows = eval::evaluate(assets, bundle, embedder.get(), {}, float(w_visual));
  ensure_parent(out);
  std::ofstream f(out);
  if (!f) throw std::runtime_error("cannot write " + out);
  eval::write_report(rows, f);
  std::cout << "wrote " << rows.size() << " pair reports to " << out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// make-fixtures

int cmd_make_fixtures(const std::string& out, int size, int pairs, std::uint64_t seed, bool dense) {
  if (out.empty()) throw UsageError("make-fixtures needs --out");
  if (pairs < 1) throw UsageError("--pairs must be >= 1");
  fs::create_directories(out);
  Manifest m;
  for (int i = 0; i < pairs; ++i) {
    FixturePair p = synth_fixture(seed + std::uint64_t(i), size);
    for (FaceAsset* a : {&p.plain, &p.makeup}) {
      if (!dense) a->dense.reset();
      m.records.push_back(save_asset(*a, out));
    }
  }
  write_manifest(m, fs::path(out) / "manifest.jsonl");
  std::cout << "wrote " << m.records.size() << " assets and " << (fs::path(out) / "manifest.jsonl").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// serve

service::Service* g_service = nullptr;

int cmd_serve(const std::string& config, const std::map<std::string, std::string>& keys) {
  const auto cfg = service::apply_config(merged_config(config, keys));
  service::Service svc(cfg);
  g_service = &svc;
  std::signal(SIGINT, [](int) {
    if (g_service) g_service->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_service) g_service->stop();
  });
  std::cerr << "serving on http://" << cfg.host << ":" << cfg.port << " (" << svc.health().dump() << ")\n";
  const bool ok = svc.listen();
  g_service = nullptr;
  if (!ok) throw std::runtime_error("could not bind " + cfg.host + ":" + std::to_string(cfg.port));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PSGAN++ makeup transfer and removal"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train a model on a manifest");
  train->add_option("--config", train_args.config, "key = value config file");
  train->add_option("--manifest", train_args.manifest, "JSON-lines asset manifest");
  train->add_option("--out", train_args.out, "run directory (checkpoints, metrics.jsonl)");
  train->add_option("--resume", train_args.resume, "checkpoint to resume from");
  add_key_flags(train, train::train_config_keys(), train_args.keys);

  TransferArgs tr;
  auto* transfer = app.add_subcommand("transfer", "transfer (or remove) makeup");
  auto* remove = app.add_subcommand("remove", "remove makeup (same as transfer --remove)");
  TransferArgs rm;
  for (auto [cmd, a] : {std::pair{transfer, &tr}, std::pair{remove, &rm}}) {
    cmd->add_option("--config", a->config, "key = value file with the flags below as keys");
    cmd->add_option("--checkpoint", a->checkpoint, "model checkpoint");
    cmd->add_option("--source", a->source, "source asset: manifest id, asset directory or file prefix");
    cmd->add_option("--manifest", a->manifest, "manifest used to resolve ids");
    cmd->add_option("--out", a->out, "output PNG (or directory in video mode)");
    cmd->add_option("--w-visual", a->keys["w_visual"], "visual feature weight in attention");
    if (cmd == transfer) {
      cmd->add_option("--reference", a->references, "reference asset(s), at most two")->expected(1, 2);
      cmd->add_option("--alpha", a->alpha, "makeup degree in [0, 1]");
      cmd->add_option("--regions", a->regions, "regions taken from the first reference (lip, skin, eye)");
      cmd->add_flag("--remove", a->remove, "remove makeup from --source");
      cmd->add_option("--video-dir", a->video_dir, "directory with frames.jsonl");
      cmd->add_flag("--blend-bg", a->blend_bg, "copy background pixels from each source frame");
      cmd->add_option("--dump-attention", a->dump_attention, "directory for attention-row heatmaps");
      cmd->add_option("--attention-pixel", a->attention_pixel, "source grid pixel y*W+x for --dump-attention");
    }
  }

  std::string ev_ckpt, ev_manifest, ev_out, ev_embedder = "mean-pool";
  double ev_w = infer::kDefaultVisualWeight;
  auto* evalc = app.add_subcommand("eval", "score every non-makeup x makeup pair");
  evalc->add_option("--checkpoint", ev_ckpt, "model checkpoint");
  evalc->add_option("--manifest", ev_manifest, "asset manifest");
  evalc->add_option("--out", ev_out, "JSON-lines report");
  evalc->add_option("--embedder", ev_embedder, "identity embedder: mean-pool or none");
  evalc->add_option("--w-visual", ev_w, "visual feature weight in attention");

  std::string fx_out;
  int fx_size = 64, fx_pairs = 2;
  std::uint64_t fx_seed = 1;
  bool fx_no_dense = false;
  auto* fixtures = app.add_subcommand("make-fixtures", "write synthetic face pairs and a manifest");
  fixtures->add_option("--out", fx_out, "output directory");
  fixtures->add_option("--size", fx_size, "image size (64 or 256)");
  fixtures->add_option("--pairs", fx_pairs, "number of plain/makeup pairs");
  fixtures->add_option("--seed", fx_seed, "first seed");
  fixtures->add_flag("--no-dense", fx_no_dense, "omit dense correspondences");

  std::string sv_config;
  std::map<std::string, std::string> sv_keys;
  auto* serve = app.add_subcommand("serve", "run the HTTP service");
  serve->add_option("--config", sv_config, "key = value config file");
  add_key_flags(serve, service::service_config_keys(), sv_keys);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(train_args);
    if (*transfer) return cmd_transfer(tr, false);
    if (*remove) return cmd_transfer(rm, true);
    if (*evalc) return cmd_eval(ev_ckpt, ev_manifest, ev_out, ev_embedder, ev_w);
    if (*fixtures) return cmd_make_fixtures(fx_out, fx_size, fx_pairs, fx_seed, !fx_no_dense);
    if (*serve) return cmd_serve(sv_config, sv_keys);
  } catch (const losses::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
