#include "habitlens.h"

#include <new>
#include <string>

#include "habitlens/common.hpp"
#include "habitlens/metrics.hpp"
#include "habitlens/runner.hpp"
#include "json.hpp"

struct hl_session {
  nlohmann::json config = nlohmann::json::object();
  std::string last_error;
};

namespace {

hl_status classify_error(const std::exception& e) {
  const std::string what = e.what();
  if (dynamic_cast<const std::invalid_argument*>(&e)) return HL_ERR_ARGUMENT;
  if (what.find("cannot open") != std::string::npos ||
      what.find("missing") != std::string::npos || what.find("No such") != std::string::npos)
    return HL_ERR_IO;
  return HL_ERR_RUNTIME;
}

hl_status fail(hl_session* session, hl_status status, const std::string& message) {
  if (session) session->last_error = message;
  return status;
}

}  // namespace

extern "C" {

const char* hl_version(void) { return habitlens::kToolVersion; }

hl_status hl_session_create(const char* config_json, hl_session** out_session) {
  if (!out_session) return HL_ERR_ARGUMENT;
  *out_session = nullptr;
  auto session = new (std::nothrow) hl_session();
  if (!session) return HL_ERR_RUNTIME;
  if (config_json && *config_json) {
    nlohmann::json parsed = nlohmann::json::parse(config_json, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object()) {
      delete session;
      return HL_ERR_ARGUMENT;
    }
    session->config = std::move(parsed);
  }
  *out_session = session;
  return HL_OK;
}

void hl_session_destroy(hl_session* session) { delete session; }

const char* hl_session_last_error(const hl_session* session) {
  return session ? session->last_error.c_str() : "";
}

hl_status hl_run(hl_session* session, const char* command, const char* extra_json) {
  if (!session) return HL_ERR_ARGUMENT;
  session->last_error.clear();
  if (!command || !*command)
    return fail(session, HL_ERR_ARGUMENT, "command must be a non-empty string");
  if (!habitlens::runner::is_known_command(command))
    return fail(session, HL_ERR_ARGUMENT, std::string("unknown command: ") + command);

  nlohmann::json opts = session->config;
  if (extra_json && *extra_json) {
    nlohmann::json extra = nlohmann::json::parse(extra_json, nullptr, false);
    if (extra.is_discarded() || !extra.is_object())
      return fail(session, HL_ERR_ARGUMENT, "extra_json is not a JSON object");
    for (auto& [key, value] : extra.items()) opts[key] = value;
  }

  try {
    habitlens::runner::run_command(command, opts);
    return HL_OK;
  } catch (const std::exception& e) {
    return fail(session, classify_error(e), e.what());
  } catch (...) {
    return fail(session, HL_ERR_RUNTIME, "unknown error");
  }
}

hl_status hl_roc_auc(const double* scores, const int32_t* labels, size_t n, double* out_auc) {
  if (!scores || !labels || !out_auc || n == 0) return HL_ERR_ARGUMENT;
  std::vector<int> y(labels, labels + n);
  auto auc = habitlens::metrics::roc_auc({scores, n}, y);
  *out_auc = auc.value_or(std::numeric_limits<double>::quiet_NaN());
  return HL_OK;
}

}  // extern "C"
