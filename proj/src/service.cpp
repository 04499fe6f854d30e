#include "psgan/service.hpp"

#include <httplib.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

namespace psgan::service {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

ApiError unprocessable(const std::string& field, const std::string& msg) {
  return {422, "invalid_" + field, field, msg};
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

const std::vector<std::string>& service_config_keys() {
  static const std::vector<std::string> keys = {"host", "port", "checkpoint", "asset_dir", "adapter", "w_visual",
                                                "workers"};
  return keys;
}

ServiceConfig apply_config(const KeyValueConfig& kv, ServiceConfig c) {
  kv.require_known(service_config_keys());
  c.host = kv.get_string("host", c.host);
  c.port = int(kv.get_long("port", c.port));
  if (kv.contains("checkpoint")) c.checkpoint = kv.get_string("checkpoint", "");
  c.asset_dir = kv.get_string("asset_dir", c.asset_dir.string());
  c.adapter = kv.get_string("adapter", c.adapter);
  c.w_visual = kv.get_double("w_visual", c.w_visual);
  c.workers = int(kv.get_long("workers", c.workers));
  if (c.port < 0 || c.port > 65535) throw ConfigFileError("port must lie in [0, 65535]");
  if (c.workers < 1) throw ConfigFileError("workers must be >= 1");
  return c;
}

// ---------------------------------------------------------------------------
// Asset store

AssetStore::AssetStore(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

std::string AssetStore::fresh_id() {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  std::ostringstream ss;
  ss << std::hex;
  for (int i = 0; i < 2; ++i) {
    const std::uint64_t v = rng();
    for (int b = 60; b >= 0; b -= 4) ss << ((v >> b) & 0xF);
  }
  return ss.str();
}

std::string AssetStore::add(const std::string& image_png, const std::string& parsing_png,
                            const std::string& landmarks_json) {
  std::lock_guard lock(mutex_);
  std::string id;
  do id = fresh_id();
  while (fs::exists(root_ / id));
  const fs::path tmp = root_ / (".tmp_" + id);
  fs::create_directories(tmp);
  write_bytes(tmp / "image.png", image_png);
  write_bytes(tmp / "parsing.png", parsing_png);
  write_bytes(tmp / "landmarks.json", landmarks_json);
  fs::rename(tmp, root_ / id);
  return id;
}

bool AssetStore::contains(const std::string& id) const {
  if (id.empty() || id.find_first_not_of("0123456789abcdef") != std::string::npos) return false;
  return fs::is_directory(root_ / id);
}

FaceAsset AssetStore::load(const std::string& id) const {
  ManifestRecord r;
  r.id = id;
  r.image_path = root_ / id / "image.png";
  r.parsing_path = root_ / id / "parsing.png";
  r.landmarks_path = root_ / id / "landmarks.json";
  return load_asset(r);
}

fs::path AssetStore::image_path(const std::string& id) const { return root_ / id / "image.png"; }

std::vector<std::string> AssetStore::ids() const {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(root_))
    if (e.is_directory() && contains(e.path().filename().string())) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Requests

TransferRequest TransferRequest::from_json(const json& body) {
  if (!body.is_object()) throw ApiError{400, "invalid_body", "body", "request body must be a JSON object"};
  static const std::vector<std::string> known = {"source_id", "reference_ids", "alpha", "regions", "mode"};
  for (const auto& [k, v] : body.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw ApiError{400, "unknown_field", k, "unknown field '" + k + "'"};
  TransferRequest r;
  if (!body.contains("source_id") || !body["source_id"].is_string())
    throw ApiError{400, "invalid_source_id", "source_id", "source_id must be a string"};
  r.source_id = body["source_id"].get<std::string>();
  if (body.contains("mode")) {
    if (!body["mode"].is_string()) throw ApiError{400, "invalid_mode", "mode", "mode must be 'transfer' or 'remove'"};
    const auto mode = body["mode"].get<std::string>();
    if (mode != "transfer" && mode != "remove")
      throw ApiError{400, "invalid_mode", "mode", "mode must be 'transfer' or 'remove'"};
    r.remove = mode == "remove";
  }
  if (body.contains("reference_ids")) {
    const auto& refs = body["reference_ids"];
    if (!refs.is_array()) throw ApiError{400, "invalid_reference_ids", "reference_ids", "reference_ids must be an array"};
    for (const auto& v : refs) {
      if (!v.is_string())
        throw ApiError{400, "invalid_reference_ids", "reference_ids", "reference_ids must hold strings"};
      r.reference_ids.push_back(v.get<std::string>());
    }
  }
  if (body.contains("alpha")) {
    if (!body["alpha"].is_number()) throw ApiError{400, "invalid_alpha", "alpha", "alpha must be a number"};
    r.alpha = body["alpha"].get<float>();
  }
  if (body.contains("regions")) {
    const auto& regs = body["regions"];
    if (!regs.is_array()) throw ApiError{400, "invalid_regions", "regions", "regions must be an array"};
    std::vector<std::string> names;
    for (const auto& v : regs) {
      if (!v.is_string()) throw ApiError{400, "invalid_regions", "regions", "regions must hold strings"};
      names.push_back(v.get<std::string>());
    }
    try {
      r.regions = infer::parse_regions(names);
    } catch (const std::exception& e) {
      throw ApiError{400, "invalid_regions", "regions", e.what()};
    }
  }
  if (r.remove && body.contains("reference_ids"))
    throw ApiError{400, "invalid_combination", "reference_ids", "remove mode takes no reference_ids"};
  return r;
}

// ---------------------------------------------------------------------------
// Service

Service::Service(ServiceConfig config)
    : config_(std::move(config)), store_(config_.asset_dir), server_(std::make_unique<httplib::Server>()) {
  const int workers = config_.workers;
  server_->new_task_queue = [workers] { return new httplib::ThreadPool(std::size_t(workers)); };
  routes();
  if (config_.checkpoint) load_model(*config_.checkpoint);
}

Service::~Service() { stop(); }

void Service::load_model(const fs::path& checkpoint) {
  auto bundle = std::make_unique<infer::Bundle>(nn::load_checkpoint(checkpoint));
  std::lock_guard lock(infer_mutex_);
  bundle_ = std::move(bundle);
  checksum_ = nn::file_digest(checkpoint);
}

json Service::health() const {
  if (!bundle_) return {{"status", "no-model"}, {"model_checksum", nullptr}};
  return {{"status", "ok"}, {"model_checksum", checksum_}};
}

std::string Service::upload(const std::string& image, const std::optional<std::string>& parsing,
                            const std::optional<std::string>& landmarks) {
  ImageTensor img;
  try {
    img = decode_image_png(image);
  } catch (const std::exception& e) {
    throw ApiError{415, "unsupported_image", "image", std::string("image is not a decodable PNG: ") + e.what()};
  }
  try {
    validate_image(img, "upload");
  } catch (const std::exception& e) {
    throw unprocessable("image", e.what());
  }

  std::string parsing_png, landmarks_text;
  if (parsing && landmarks) {
    parsing_png = *parsing;
    landmarks_text = *landmarks;
  } else {
    if (config_.adapter.empty())
      throw ApiError{503, "no_adapter", parsing ? "landmarks" : "parsing",
                     "metadata missing and no face-analysis adapter is configured"};
    const fs::path work = fs::temp_directory_path() / ("psganpp_adapter_" + std::to_string(std::random_device{}()));
    fs::create_directories(work);
    write_bytes(work / "image.png", image);
    const std::string cmd = config_.adapter + " " + shell_quote((work / "image.png").string()) + " " +
                            shell_quote(work.string()) + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    std::error_code ec;
    if (rc != 0 || !fs::exists(work / "parsing.png") || !fs::exists(work / "landmarks.json")) {
      fs::remove_all(work, ec);
      throw ApiError{503, "adapter_failed", parsing ? "landmarks" : "parsing", "face-analysis adapter failed"};
    }
    parsing_png = parsing ? *parsing : read_bytes(work / "parsing.png");
    landmarks_text = landmarks ? *landmarks : read_bytes(work / "landmarks.json");
    fs::remove_all(work, ec);
  }

  try {
    validate_parsing(decode_parsing_png(parsing_png), img.height, img.width, "upload");
  } catch (const std::exception& e) {
    throw unprocessable("parsing", e.what());
  }
  try {
    validate_landmarks(parse_landmarks_json(landmarks_text, "upload"), img.height, img.width, "upload");
  } catch (const std::exception& e) {
    throw unprocessable("landmarks", e.what());
  }
  return store_.add(image, parsing_png, landmarks_text);
}

std::string Service::transfer_png(const TransferRequest& req) {
  if (!bundle_) throw ApiError{409, "model_not_loaded", "model", "no model is loaded"};
  auto fetch = [this](const std::string& id, const std::string& field) {
    if (!store_.contains(id)) throw ApiError{404, "unknown_asset", field, "unknown asset '" + id + "'"};
    return store_.load(id);
  };
  const FaceAsset source = fetch(req.source_id, "source_id");
  std::vector<FaceAsset> refs;
  for (const auto& id : req.reference_ids) refs.push_back(fetch(id, "reference_ids"));

  infer::TransferSpec spec;
  spec.remove = req.remove;
  for (const auto& r : refs) spec.references.push_back(&r);
  spec.alpha = req.alpha;
  spec.regions = req.regions;
  try {
    infer::validate_spec(spec);
  } catch (const infer::RequestError& e) {
    throw ApiError{400, "invalid_combination", e.field(), e.what()};
  }
  std::lock_guard lock(infer_mutex_);
  try {
    return encode_image_png(infer::execute(*bundle_, source, spec, float(config_.w_visual)));
  } catch (const nn::ShapeError& e) {
    throw unprocessable("source_id", e.what());
  }
}

void Service::routes() {
  auto& s = *server_;
  auto send_error = [](httplib::Response& res, const ApiError& e) {
    res.status = e.status;
    res.set_content(e.to_json().dump(), "application/json");
  };

  s.Get("/api/health", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(health().dump(), "application/json");
  });

  s.Get("/api/assets", [this](const httplib::Request&, httplib::Response& res) {
    json list = json::array();
    for (const auto& id : store_.ids()) list.push_back({{"asset_id", id}});
    res.set_content(json{{"assets", list}}.dump(), "application/json");
  });

  s.Get(R"(/api/assets/([0-9a-zA-Z_]+)/image)", [this, send_error](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    if (!store_.contains(id)) return send_error(res, {404, "unknown_asset", "asset_id", "unknown asset '" + id + "'"});
    res.set_content(read_bytes(store_.image_path(id)), "image/png");
  });

  s.Post("/api/assets", [this, send_error](const httplib::Request& req, httplib::Response& res) {
    try {
      if (!req.is_multipart_form_data() || !req.has_file("image"))
        throw ApiError{400, "missing_image", "image", "multipart field 'image' is required"};
      std::optional<std::string> parsing, landmarks;
      if (req.has_file("parsing")) parsing = req.get_file_value("parsing").content;
      if (req.has_file("landmarks")) landmarks = req.get_file_value("landmarks").content;
      const std::string id = upload(req.get_file_value("image").content, parsing, landmarks);
      res.status = 201;
      res.set_content(json{{"asset_id", id}}.dump(), "application/json");
    } catch (const ApiError& e) {
      send_error(res, e);
    }
  });

  s.Post("/api/transfer", [this, send_error](const httplib::Request& req, httplib::Response& res) {
    try {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const std::exception&) {
        throw ApiError{400, "invalid_body", "body", "request body is not valid JSON"};
      }
      const TransferRequest tr = TransferRequest::from_json(body);
      const auto t0 = std::chrono::steady_clock::now();
      const std::string png = transfer_png(tr);
      const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      res.set_header("X-Inference-Millis", std::to_string(ms));
      res.set_content(png, "image/png");
    } catch (const ApiError& e) {
      send_error(res, e);
    } catch (const AssetError& e) {
      send_error(res, {422, "invalid_asset", "source_id", e.what()});
    }
  });

  s.set_exception_handler([send_error](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string msg = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      msg = e.what();
    } catch (...) {
    }
    send_error(res, {500, "internal_error", "", msg});
  });
}

bool Service::listen() { return server_->listen(config_.host, config_.port); }

int Service::bind_any_port() { return server_->bind_to_any_port(config_.host); }

bool Service::listen_after_bind() { return server_->listen_after_bind(); }

void Service::stop() {
  if (server_) server_->stop();
}

bool Service::is_running() const { return server_ && server_->is_running(); }

}  // namespace psgan::service
