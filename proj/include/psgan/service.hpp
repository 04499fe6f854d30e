#pragma once

// HTTP inference service: asset upload/listing, transfer/removal requests and
// health reporting over a single loaded bundle.

#include "psgan/config.hpp"
#include "psgan/inference.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace httplib {
class Server;
}

namespace psgan::service {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<std::filesystem::path> checkpoint;
  std::filesystem::path asset_dir = "assets";
  /// External command that fills in missing metadata. Invoked as
  /// `<adapter> <image.png> <out_dir>`; it must write out_dir/parsing.png and
  /// out_dir/landmarks.json and exit 0.
  std::string adapter;
  double w_visual = 0.01;
  int workers = 4;
};

const std::vector<std::string>& service_config_keys();
ServiceConfig apply_config(const KeyValueConfig& kv, ServiceConfig base = {});

/// 4xx/5xx error with a machine-readable code and the offending field.
struct ApiError {
  int status = 400;
  std::string error_code;
  std::string field;
  std::string message;

  nlohmann::json to_json() const { return {{"error_code", error_code}, {"field", field}, {"message", message}}; }
};

/// On-disk store: `<root>/<id>/{image.png, parsing.png, landmarks.json}`.
class AssetStore {
 public:
  explicit AssetStore(std::filesystem::path root);

  /// Persists validated parts under a fresh id and returns it.
  std::string add(const std::string& image_png, const std::string& parsing_png, const std::string& landmarks_json);
  bool contains(const std::string& id) const;
  FaceAsset load(const std::string& id) const;
  std::filesystem::path image_path(const std::string& id) const;
  std::vector<std::string> ids() const;

 private:
  std::string fresh_id();
  std::filesystem::path root_;
  std::mutex mutex_;
};

/// Parsed body of POST /api/transfer.
struct TransferRequest {
  std::string source_id;
  std::vector<std::string> reference_ids;
  std::optional<float> alpha;
  std::optional<std::vector<Region>> regions;
  bool remove = false;

  /// Throws ApiError(400) for schema violations.
  static TransferRequest from_json(const nlohmann::json& body);
};

class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();

  /// Loads a checkpoint; health then reports its SHA-256 digest.
  void load_model(const std::filesystem::path& checkpoint);
  bool has_model() const { return bundle_ != nullptr; }
  const std::string& model_checksum() const { return checksum_; }

  /// Binds and serves until stop(); returns false if binding failed.
  bool listen();
  /// Binds to an ephemeral port on `host`; returns the port or -1.
  int bind_any_port();
  /// Serves on a socket bound by bind_any_port().
  bool listen_after_bind();
  void stop();
  bool is_running() const;

  /// POST /api/assets with already-extracted multipart fields.
  std::string upload(const std::string& image, const std::optional<std::string>& parsing,
                     const std::optional<std::string>& landmarks);
  /// POST /api/transfer body -> PNG bytes. Throws ApiError.
  std::string transfer_png(const TransferRequest& req);
  nlohmann::json health() const;

 private:
  void routes();

  ServiceConfig config_;
  AssetStore store_;
  std::unique_ptr<infer::Bundle> bundle_;
  std::string checksum_;
  std::mutex infer_mutex_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace psgan::service
