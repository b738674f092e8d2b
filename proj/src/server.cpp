#include "udscreen/server.hpp"

#include <httplib.h>

namespace udscreen::study {

namespace {

void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

std::string bearer_token(const httplib::Request& req) {
  const auto h = req.get_header_value("Authorization");
  const std::string prefix = "Bearer ";
  if (h.size() > prefix.size() && h.compare(0, prefix.size(), prefix) == 0) return h.substr(prefix.size());
  return {};
}

std::string required_param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) throw bad_request(std::string("missing query parameter ") + name);
  return req.get_param_value(name);
}

Phase parse_phase(const std::string& s) {
  try {
    return phase_from_string(s);
  } catch (const Error& e) {
    throw bad_request(e.what());
  }
}

}  // namespace

struct StudyServer::Impl {
  StudyService& service;
  httplib::Server http;

  explicit Impl(StudyService& s) : service(s) { routes(); }

  template <typename F>
  httplib::Server::Handler guarded(F fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const ServiceError& e) {
        send_json(res, e.status(), Json{{"error", e.what()}});
      } catch (const Json::exception& e) {
        send_json(res, 400, Json{{"error", std::string("malformed request: ") + e.what()}});
      } catch (const Error& e) {
        send_json(res, 400, Json{{"error", e.what()}});
      } catch (const std::exception& e) {
        send_json(res, 500, Json{{"error", e.what()}});
      }
    };
  }

  void check_study(const httplib::Request& req) const {
    if (req.matches[1] != service.definition().study_id) throw not_found("unknown study " + req.matches[1].str());
  }

  // The caller must be the participant in question, or the admin.
  void authorize_participant(const std::string& token, const std::string& participant_id) const {
    if (token.empty()) throw unauthorized("missing bearer token");
    if (service.is_admin_token(token)) return;
    const auto* who = service.participant_for_token(token);
    if (!who) throw unauthorized("unknown token");
    if (who->profile.participant_id != participant_id) throw forbidden("token does not belong to " + participant_id);
  }

  void authorize_admin(const httplib::Request& req) const {
    const auto token = bearer_token(req);
    if (token.empty()) throw unauthorized("missing bearer token");
    if (!service.is_admin_token(token)) {
      if (service.participant_for_token(token)) throw forbidden("admin only");
      throw unauthorized("unknown token");
    }
  }

  void routes() {
    http.Get(R"(/study/([^/]+)/patients)", guarded([this](const httplib::Request& req, httplib::Response& res) {
               check_study(req);
               const auto pid = required_param(req, "participant");
               authorize_participant(bearer_token(req), pid);
               send_json(res, 200, service.patients(pid));
             }));

    http.Get(R"(/study/([^/]+)/view)", guarded([this](const httplib::Request& req, httplib::Response& res) {
               check_study(req);
               const auto pid = required_param(req, "participant");
               authorize_participant(bearer_token(req), pid);
               send_json(res, 200,
                         service.view(pid, required_param(req, "patient"), parse_phase(required_param(req, "phase"))));
             }));

    http.Get(R"(/study/([^/]+)/image/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
               check_study(req);
               auto token = bearer_token(req);
               if (token.empty() && req.has_param("access_token")) token = req.get_param_value("access_token");
               if (token.empty()) throw unauthorized("missing bearer token");
               if (!service.is_admin_token(token) && !service.participant_for_token(token)) {
                 throw unauthorized("unknown token");
               }
               const auto bytes = service.image_png(req.matches[2]);
               res.status = 200;
               res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
             }));

    http.Post(R"(/study/([^/]+)/selection)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                check_study(req);
                const Json body = Json::parse(req.body);
                const auto pid = body.at("participant_id").get<std::string>();
                authorize_participant(bearer_token(req), pid);
                const auto record =
                    service.submit(pid, body.at("patient_id").get<std::string>(),
                                   parse_phase(body.at("phase").get<std::string>()),
                                   body.at("boxes").get<std::vector<BoundingBox>>(), body.at("confidence").get<int>());
                send_json(res, 201, record);
              }));

    http.Get(R"(/study/([^/]+)/selection)", guarded([this](const httplib::Request& req, httplib::Response& res) {
               check_study(req);
               const auto pid = required_param(req, "participant");
               authorize_participant(bearer_token(req), pid);
               const auto r =
                   service.selection(pid, required_param(req, "patient"), parse_phase(required_param(req, "phase")));
               if (!r) throw not_found("no selection recorded");
               send_json(res, 200, *r);
             }));

    http.Get(R"(/study/([^/]+)/report)", guarded([this](const httplib::Request& req, httplib::Response& res) {
               check_study(req);
               authorize_admin(req);
               auto options = service.default_report_options();
               if (req.has_param("majority_phase")) {
                 options.majority_phase = parse_phase(req.get_param_value("majority_phase"));
               }
               send_json(res, 200, service.report(options));
             }));

    http.Post("/pipeline/run", guarded([this](const httplib::Request& req, httplib::Response& res) {
                authorize_admin(req);
                const Json body = Json::parse(req.body);
                const auto o = service.run_pipeline(body.at("patient_id").get<std::string>());
                send_json(res, o.ok() ? 200 : 500,
                          Json{{"key", o.key}, {"cache_hit", o.cache_hit}, {"status", o.status}, {"scores", o.scores}});
              }));
  }
};

StudyServer::StudyServer(StudyService& service) : impl_(std::make_unique<Impl>(service)) {}
StudyServer::~StudyServer() { stop(); }

bool StudyServer::listen(const std::string& host, int port) { return impl_->http.listen(host, port); }
int StudyServer::bind_to_any_port(const std::string& host) { return impl_->http.bind_to_any_port(host); }
bool StudyServer::listen_after_bind() { return impl_->http.listen_after_bind(); }
void StudyServer::wait_until_ready() const { impl_->http.wait_until_ready(); }
void StudyServer::stop() {
  if (impl_) impl_->http.stop();
}

}  // namespace udscreen::study
