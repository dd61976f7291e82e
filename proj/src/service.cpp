#include "mixforge/service.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>

#include <httplib.h>

#include "mixforge/error.hpp"
#include "mixforge/log.hpp"

namespace mixforge {

namespace {

HttpResponse reply(int status, const nlohmann::json& body) { return {status, body.dump()}; }

HttpResponse error_reply(int status, const std::string& message, nlohmann::json extra = nlohmann::json::object()) {
  extra["error"] = message;
  return reply(status, extra);
}

std::string incident_id() {
  static std::atomic<std::uint64_t> counter{0};
  const auto t = static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count());
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(t ^ (++counter << 48)));
  return buf;
}

struct ParsedRequest {
  FeatureValues values;
  nlohmann::json warnings = nlohmann::json::array();
  std::optional<HttpResponse> error;
};

}  // namespace

Service::Service(ModelBundle bundle, ServiceOptions options) : bundle_(std::move(bundle)), options_(options) {
  bundle_.validate();
  for (const auto& name : bundle_.schema.input_names()) {
    for (const auto& e : bundle_.entries) {
      const auto& f = e.model2.features;
      if (std::find(f.begin(), f.end(), name) != f.end()) {
        required_.push_back(name);
        break;
      }
    }
  }
}

nlohmann::json Service::health() const { return {{"status", "ok"}, {"targets", bundle_.targets()}}; }

nlohmann::json Service::schema() const {
  nlohmann::json inputs = nlohmann::json::array();
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& c : bundle_.schema.columns()) {
    nlohmann::json col = {{"name", c.name}, {"unit", c.unit}, {"min", c.observed_min}, {"max", c.observed_max}};
    if (c.kind == ColumnKind::input) {
      col["required"] = std::find(required_.begin(), required_.end(), c.name) != required_.end();
      inputs.push_back(std::move(col));
    } else {
      const auto it = std::find_if(bundle_.entries.begin(), bundle_.entries.end(),
                                   [&](const BundleEntry& e) { return e.target == c.name; });
      if (it == bundle_.entries.end()) continue;
      col["included"] = it->model2.features;
      targets.push_back(std::move(col));
    }
  }
  return {{"version", bundle_.schema.version()}, {"inputs", inputs}, {"targets", targets}};
}

nlohmann::json Service::model_info() const {
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& e : bundle_.entries) {
    auto model = [](const Ensemble& m, const ModelMetrics& metrics) {
      return nlohmann::json{{"train", metrics.train.to_json()},
                            {"test", metrics.test.to_json()},
                            {"hyperparameters", m.config.to_json()},
                            {"features", m.features},
                            {"trees", m.trees.size()}};
    };
    targets.push_back({{"target", e.target},
                       {"unit", e.unit},
                       {"deployed", "model2"},
                       {"model1", model(e.model1, e.metrics1)},
                       {"model2", model(e.model2, e.metrics2)},
                       {"removed_rows", e.removed.size()}});
  }
  return {{"format_version", bundle_.format_version}, {"metadata", bundle_.metadata}, {"targets", targets}};
}

static ParsedRequest parse_request(const ModelBundle& bundle, const std::vector<std::string>& required, bool strict,
                                   std::string_view body) {
  ParsedRequest out;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(body.begin(), body.end());
  } catch (const nlohmann::json::parse_error& e) {
    out.error = error_reply(400, "malformed JSON", {{"detail", e.what()}});
    return out;
  }
  if (doc.is_object() && doc.contains("features") && doc.at("features").is_object()) doc = doc.at("features");
  if (!doc.is_object()) {
    out.error = error_reply(400, "request body must be a JSON object of feature name to number");
    return out;
  }
  for (const auto& [name, value] : doc.items()) {
    const auto idx = bundle.schema.index_of(name);
    if (!idx || bundle.schema.column(*idx).kind != ColumnKind::input) {
      out.error = error_reply(422, "unknown feature '" + name + "'", {{"feature", name}});
      return out;
    }
    if (!value.is_number() || !std::isfinite(value.get<double>())) {
      out.error = error_reply(422, "feature '" + name + "' must be a finite number", {{"feature", name}});
      return out;
    }
    const double v = value.get<double>();
    const ColumnSpec& spec = bundle.schema.column(*idx);
    if (!spec.in_range(v)) {
      nlohmann::json w = {{"feature", name},
                          {"value", v},
                          {"min", spec.observed_min},
                          {"max", spec.observed_max},
                          {"message", name + " = " + value.dump() + " is outside the observed range [" +
                                          nlohmann::json(spec.observed_min).dump() + ", " +
                                          nlohmann::json(spec.observed_max).dump() + "]"}};
      if (strict) {
        out.error = error_reply(422, "feature '" + name + "' is out of range", w);
        return out;
      }
      out.warnings.push_back(std::move(w));
    }
    out.values[name] = v;
  }
  for (const auto& name : required) {
    if (!out.values.contains(name)) {
      out.error = error_reply(422, "missing feature '" + name + "'", {{"feature", name}});
      return out;
    }
  }
  return out;
}

HttpResponse Service::predict(std::string_view body) const {
  auto req = parse_request(bundle_, required_, options_.strict_ranges, body);
  if (req.error) return *req.error;
  nlohmann::json predictions = nlohmann::json::object();
  for (const auto& e : bundle_.entries) {
    const double v = e.model2.predict_row(bundle_.model_row(e.model2, req.values));
    if (!std::isfinite(v)) throw DataError("non-finite prediction for '" + e.target + "'");
    predictions[e.target] = {{"value", v}, {"unit", e.unit}, {"features_used", e.model2.features}};
  }
  return reply(200, {{"predictions", predictions}, {"warnings", req.warnings}});
}

HttpResponse Service::explain(std::string_view body) const {
  auto req = parse_request(bundle_, required_, options_.strict_ranges, body);
  if (req.error) return *req.error;
  nlohmann::json out = nlohmann::json::object();
  for (const auto& e : bundle_.entries) {
    const Attribution a = shap_values(e.model2, bundle_.model_row(e.model2, req.values), e.background);
    nlohmann::json contributions = nlohmann::json::object();
    for (std::size_t i = 0; i < a.features.size(); ++i) contributions[a.features[i]] = a.contributions[i];
    out[e.target] = {{"base_value", a.base_value},
                     {"prediction", a.prediction},
                     {"unit", e.unit},
                     {"features", a.features},
                     {"contributions", contributions}};
  }
  return reply(200, {{"explanations", out}, {"warnings", req.warnings}});
}

HttpResponse Service::handle(std::string_view method, std::string_view path, std::string_view body) const {
  try {
    const bool get = method == "GET";
    const bool post = method == "POST";
    if (path == "/health") return get ? reply(200, health()) : error_reply(405, "use GET");
    if (path == "/schema") return get ? reply(200, schema()) : error_reply(405, "use GET");
    if (path == "/model/info") return get ? reply(200, model_info()) : error_reply(405, "use GET");
    if (path == "/predict") return post ? predict(body) : error_reply(405, "use POST");
    if (path == "/explain") return post ? explain(body) : error_reply(405, "use POST");
    return error_reply(404, "no such endpoint '" + std::string(path) + "'");
  } catch (const std::exception& e) {
    const std::string id = incident_id();
    log().error("request {} {} failed [{}]: {}", method, path, id, e.what());
    return error_reply(500, "internal error", {{"id", id}});
  }
}

void Service::listen(const std::string& host, int port) const {
  httplib::Server server;
  auto adapt = [this](const httplib::Request& req, httplib::Response& res) {
    const HttpResponse out = handle(req.method, req.path, req.body);
    res.status = out.status;
    res.set_content(out.body, "application/json");
  };
  // both methods on every route so handle() can answer 405 for the wrong one
  for (const char* path : {"/health", "/schema", "/model/info", "/predict", "/explain"}) {
    server.Get(path, adapt);
    server.Post(path, adapt);
  }
  server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (res.body.empty()) {
      res.set_content(nlohmann::json{{"error", "no such endpoint '" + req.path + "'"}}.dump(), "application/json");
    }
  });
  log().warn("serving {} target(s) on http://{}:{}", bundle_.entries.size(), host, port);
  if (!server.listen(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
}

}  // namespace mixforge
