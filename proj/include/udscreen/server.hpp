#pragma once

#include <memory>
#include <string>

#include "udscreen/study.hpp"

namespace udscreen::study {

// HTTP/JSON front of a StudyService. Routes:
//   GET  /study/{sid}/patients?participant=
//   GET  /study/{sid}/view?participant=&patient=&phase=
//   GET  /study/{sid}/image/{patient}              (PNG)
//   POST /study/{sid}/selection
//   GET  /study/{sid}/selection?participant=&patient=&phase=
//   GET  /study/{sid}/report[?majority_phase=]     (admin)
//   POST /pipeline/run                             (admin)
// Every request needs "Authorization: Bearer <token>"; the image route also
// takes ?access_token= so it can back an <img> element.
class StudyServer {
 public:
  explicit StudyServer(StudyService& service);
  ~StudyServer();
  StudyServer(const StudyServer&) = delete;
  StudyServer& operator=(const StudyServer&) = delete;

  // Binds and serves until stop(); false if the port cannot be bound.
  bool listen(const std::string& host, int port);
  // Binds an ephemeral port and returns it; serve with listen_after_bind().
  int bind_to_any_port(const std::string& host);
  bool listen_after_bind();
  void wait_until_ready() const;
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace udscreen::study
