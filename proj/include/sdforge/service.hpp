#pragma once

// Run service: discovery runs persisted one directory per run, advanced on
// analyst command. RunService::handle is the transport-free API; serve()
// binds it to HTTP and optionally hosts a static UI directory at "/".

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

namespace sdforge {

enum class RunKind { Prim, Cart, Adaptive };
enum class RunState { Created, Sampling, Ready, AwaitingSelection, Stepping, Done, Failed };

std::string to_string(RunKind k);
std::string to_string(RunState s);
RunKind run_kind_from_string(const std::string& s);
RunState run_state_from_string(const std::string& s);

/// created -> sampling -> ready -> awaiting_selection <-> stepping -> done,
/// plus any -> failed and stepping -> stepping (re-selection).
bool legal_transition(RunState from, RunState to);

struct Request {
    std::string method;
    std::string path;
    std::map<std::string, std::string> query;
    std::string body;
};

struct Response {
    int status = 200;
    nlohmann::json body;
};

struct ServiceOptions {
    std::filesystem::path data_dir;
    // Where POST /runs resolves an experiment given by name.
    std::filesystem::path experiments_dir;
};

class Run;

class RunService {
public:
    /// Loads every run persisted under data_dir/runs.
    explicit RunService(ServiceOptions options);
    ~RunService();

    RunService(const RunService&) = delete;
    RunService& operator=(const RunService&) = delete;

    /// Thread-safe. Every response body carries schema_version.
    Response handle(const Request& req);

    std::vector<std::string> run_ids() const;

private:
    Response create_run(const Request& req);
    std::shared_ptr<Run> find(const std::string& id) const;

    ServiceOptions options_;
    mutable std::shared_mutex runs_mutex_;
    std::map<std::string, std::shared_ptr<Run>> runs_;
    std::atomic<std::uint64_t> next_id_{1};
};

/// HTTP/1.1 front end for a RunService. Requests under /runs go to
/// RunService::handle; with a UI directory, other GETs serve its files.
class HttpServer {
public:
    HttpServer(RunService& service, std::optional<std::filesystem::path> ui_dir);
    ~HttpServer();

    /// Port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    /// Blocks until stop().
    void listen();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace sdforge
