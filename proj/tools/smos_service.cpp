#include <iostream>

#include <CLI11.hpp>
#include <httplib.h>

#include "eva/smos.hpp"

int main(int argc, char** argv) {
  CLI::App app{"SMOS rating service"};
  int port = 8080;
  std::string host = "127.0.0.1";
  eva::smos::Options options;
  options.data_dir = "smos-data";
  app.add_option("--port", port, "Listen port");
  app.add_option("--host", host, "Listen address");
  app.add_option("--data-dir", options.data_dir, "Session and rating storage");
  app.add_flag("--allow-partial", options.allow_partial, "Accept ratings without listen_complete");
  CLI11_PARSE(app, argc, argv);

  try {
    eva::smos::Service service(options);
    httplib::Server server;
    service.mount(server);
    std::cerr << "smos-service listening on " << host << ":" << port << " (data " << options.data_dir << ")\n";
    if (!server.listen(host, port)) {
      std::cerr << "error: cannot listen on " << host << ":" << port << "\n";
      return 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
