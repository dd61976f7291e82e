#pragma once

#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "mixforge/pipeline.hpp"

namespace mixforge {

struct ServiceOptions {
  bool strict_ranges = false;  // reject out-of-range inputs instead of warning
};

struct HttpResponse {
  int status = 200;
  std::string body;
};

/// Stateless JSON API over an immutable bundle. `handle` is the whole
/// request -> response mapping; `listen` only adapts it to HTTP.
class Service {
 public:
  Service(ModelBundle bundle, ServiceOptions options = {});

  HttpResponse handle(std::string_view method, std::string_view path, std::string_view body) const;

  /// Blocks serving requests until the process is stopped.
  void listen(const std::string& host, int port) const;

  const ModelBundle& bundle() const { return bundle_; }

 private:
  nlohmann::json health() const;
  nlohmann::json schema() const;
  nlohmann::json model_info() const;
  HttpResponse predict(std::string_view body) const;
  HttpResponse explain(std::string_view body) const;

  ModelBundle bundle_;
  ServiceOptions options_;
  std::vector<std::string> required_;  // union of every deployed model's features
};

}  // namespace mixforge
