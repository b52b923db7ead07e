#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <thread>
#include <unistd.h>

#include "sdforge/serialize.hpp"
#include "sdforge/service.hpp"

#include <httplib.h>

using namespace sdforge;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag)
        : path(fs::temp_directory_path() / ("sdforge-svc-" + tag + "-" + std::to_string(::getpid()))) {
        fs::remove_all(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

ServiceOptions options(const TempDir& dir) { return {dir.path, fs::path(SDFORGE_DATA_DIR) / "experiments"}; }

Response post(RunService& s, const std::string& path, const json& body = json::object()) {
    return s.handle({"POST", path, {}, body.dump()});
}

Response get(RunService& s, const std::string& path, std::map<std::string, std::string> query = {}) {
    return s.handle({"GET", path, std::move(query), ""});
}

std::string create(RunService& s, const json& body) {
    const auto r = post(s, "/runs", body);
    REQUIRE_MESSAGE(r.status == 201, r.body.dump());
    return r.body.at("run_id").get<std::string>();
}

json small_adaptive_params() {
    return {{"n_init", 30}, {"pool_size", 300}, {"n_iter", 4}, {"batch", 1},
            {"gp_budget", 40}, {"gp_starts", 4}, {"truth_n", 60}};
}

} // namespace

TEST_CASE("prim run on norrebro serves a density-monotone trajectory") {
    TempDir dir("norrebro");
    RunService svc(options(dir));
    const auto id = create(svc, {{"experiment", "norrebro"}, {"kind", "prim"}, {"overrides", {"lever.delta=5"}}});
    CHECK(id == "run-000001");

    const auto rec = get(svc, "/runs/" + id);
    REQUIRE(rec.status == 200);
    CHECK(rec.body.at("state") == "awaiting_selection");
    CHECK(rec.body.at("schema_version") == kSchemaVersion);
    CHECK(rec.body.at("transitions") == json({"created", "sampling", "ready", "awaiting_selection"}));

    const auto traj = get(svc, "/runs/" + id + "/trajectory");
    REQUIRE(traj.status == 200);
    const auto& steps = traj.body.at("steps");
    REQUIRE(steps.size() >= 2);
    for (std::size_t i = 1; i < steps.size(); ++i)
        CHECK(steps[i].at("density").get<double>() >= steps[i - 1].at("density").get<double>());
    CHECK(traj.body.at("box_round") == 0);
}

TEST_CASE("select then cover-next fits the next round on the residual") {
    TempDir dir("cover");
    RunService svc(options(dir));
    const auto id = create(svc, {{"experiment", "oracle_ring"}, {"kind", "prim"}});
    const auto traj = get(svc, "/runs/" + id + "/trajectory").body;
    REQUIRE(traj.at("steps").size() > 7);
    const auto inside = traj.at("steps").at(7).at("n_inside").get<std::size_t>();

    auto r = post(svc, "/runs/" + id + "/select", {{"step_index", 7}});
    REQUIRE_MESSAGE(r.status == 200, r.body.dump());
    CHECK(r.body.at("state") == "stepping");
    CHECK(r.body.at("box").at("limits") == traj.at("steps").at(7).at("limits"));

    r = post(svc, "/runs/" + id + "/cover-next");
    REQUIRE_MESSAGE(r.status == 200, r.body.dump());
    CHECK(r.body.at("n_residual") == 2000 - inside);

    const auto next = get(svc, "/runs/" + id + "/trajectory", {{"box_round", "1"}}).body;
    CHECK(next.at("n_fitting_points") == 2000 - inside);
    CHECK(next.at("steps").at(0).at("n_inside") == 2000 - inside);

    // Every residual point lies outside the selected box.
    const auto pts = get(svc, "/runs/" + id + "/points").body;
    const auto box = box_from_json(traj.at("steps").at(7), UncertaintySpace::unit_cube(2));
    std::size_t fitting = 0;
    for (std::size_t i = 0; i < pts.at("points").size(); ++i) {
        Eigen::RowVector2d x(pts["points"][i][0].get<double>(), pts["points"][i][1].get<double>());
        const bool in_fit = pts.at("in_fitting_data").at(i).get<bool>();
        CHECK(in_fit == !box.contains(x));
        fitting += in_fit;
    }
    CHECK(fitting == 2000 - inside);

    const auto original = get(svc, "/runs/" + id + "/trajectory", {{"box_round", "0"}}).body;
    CHECK(original.at("selected_index") == 7);
}

TEST_CASE("state-machine conflicts answer 409") {
    TempDir dir("conflict");
    RunService svc(options(dir));
    const auto prim = create(svc, {{"experiment", "oracle_box"}, {"kind", "prim"}, {"params", {{"n", 500}}}});
    CHECK(post(svc, "/runs/" + prim + "/cover-next").status == 409);
    CHECK(post(svc, "/runs/" + prim + "/adaptive-step").status == 409);

    const auto cart = create(svc, {{"experiment", "oracle_box"}, {"kind", "cart"}, {"params", {{"n", 500}}}});
    CHECK(get(svc, "/runs/" + cart).body.at("state") == "done");
    CHECK(post(svc, "/runs/" + cart + "/select", {{"step_index", 0}}).status == 409);
    CHECK(post(svc, "/runs/" + cart + "/cover-next").status == 409);
    CHECK(get(svc, "/runs/" + cart + "/trajectory").status == 409);
    CHECK(get(svc, "/runs/" + cart + "/report").body.at("boxes").size() >= 1);
}

TEST_CASE("unknown runs and routes answer 404") {
    TempDir dir("missing");
    RunService svc(options(dir));
    CHECK(get(svc, "/runs/run-999999").status == 404);
    CHECK(post(svc, "/runs/run-999999/select", {{"step_index", 0}}).status == 404);
    CHECK(get(svc, "/nowhere").status == 404);
    const auto id = create(svc, {{"experiment", "oracle_box"}, {"kind", "prim"}, {"params", {{"n", 300}}}});
    CHECK(get(svc, "/runs/" + id + "/nothing").status == 404);
    CHECK(get(svc, "/runs/" + id + "/trajectory", {{"box_round", "4"}}).status == 404);
    const auto r = get(svc, "/runs/run-999999");
    CHECK(r.body.at("schema_version") == kSchemaVersion);
    CHECK(r.body.contains("error"));
}

TEST_CASE("invalid bodies answer 422") {
    TempDir dir("invalid");
    RunService svc(options(dir));
    CHECK(svc.handle({"POST", "/runs", {}, "{ nope"}).status == 422);
    CHECK(post(svc, "/runs", {{"kind", "prim"}}).status == 422);
    CHECK(post(svc, "/runs", {{"experiment", "oracle_box"}, {"kind", "forest"}}).status == 422);
    CHECK(post(svc, "/runs", {{"experiment", "no_such"}, {"kind", "prim"}}).status == 422);
    CHECK(post(svc, "/runs", {{"experiment", "../x"}, {"kind", "prim"}}).status == 422);
    CHECK(post(svc, "/runs", {{"experiment", "oracle_box"}, {"kind", "prim"}, {"overrides", {"bogus=1"}}}).status ==
          422);
    CHECK(post(svc, "/runs", {{"experiment", "oracle_box"}, {"kind", "prim"}, {"params", {{"patience", 0.9}}}})
              .status == 422);
    CHECK(svc.run_ids().empty());

    const auto id = create(svc, {{"experiment", "oracle_box"}, {"kind", "prim"}, {"params", {{"n", 300}}}});
    const auto n_steps = get(svc, "/runs/" + id + "/trajectory").body.at("steps").size();
    CHECK(post(svc, "/runs/" + id + "/select", {{"step_index", n_steps}}).status == 422);
    CHECK(post(svc, "/runs/" + id + "/select", {{"step_index", -1}}).status == 422);
    CHECK(post(svc, "/runs/" + id + "/select", json::object()).status == 422);
    CHECK(get(svc, "/runs/" + id + "/points", {{"projection", "x1,zz"}}).status == 422);
    CHECK(get(svc, "/runs/" + id + "/trajectory", {{"box_round", "one"}}).status == 422);
    CHECK(get(svc, "/runs/" + id).body.at("state") == "awaiting_selection");
}

TEST_CASE("an inline experiment document is accepted") {
    TempDir dir("inline");
    RunService svc(options(dir));
    json doc = json::parse(read_file(fs::path(SDFORGE_DATA_DIR) / "experiments" / "oracle_box.experiment"));
    doc["n_scenarios"] = 400;
    const auto id = create(svc, {{"experiment", doc}, {"kind", "prim"}});
    CHECK(get(svc, "/runs/" + id).body.at("prim").at("n_points") == 400);
}

TEST_CASE("points endpoint projects onto the requested dims") {
    TempDir dir("points");
    RunService svc(options(dir));
    const auto id = create(svc, {{"experiment", "hellerup"}, {"kind", "prim"}, {"overrides", {"lever.delta=2"}}});
    const auto r = get(svc, "/runs/" + id + "/points", {{"projection", "extraversion,building"}});
    REQUIRE(r.status == 200);
    CHECK(r.body.at("dims") == json({"extraversion", "building"}));
    CHECK(r.body.at("points").size() == 200);
    CHECK(r.body.at("points").at(0).size() == 2);
    CHECK(r.body.at("labels").size() == 200);
    CHECK(r.body.at("in_box").size() == 200);
    const auto all = get(svc, "/runs/" + id + "/points");
    CHECK(all.body.at("dims").size() == 3);
}

TEST_CASE("adaptive runs advance on command and honour the analyst's box") {
    TempDir dir("adaptive");
    RunService svc(options(dir));
    const auto id = create(svc, {{"experiment", "norrebro"},
                                 {"kind", "adaptive"},
                                 {"overrides", {"lever.delta=5"}},
                                 {"params", small_adaptive_params()}});
    CHECK(get(svc, "/runs/" + id).body.at("state") == "awaiting_selection");
    CHECK(get(svc, "/runs/" + id + "/trajectory").status == 200);
    CHECK(post(svc, "/runs/" + id + "/cover-next").status == 409);
    CHECK(post(svc, "/runs/" + id + "/adaptive-step", {{"n", 0}}).status == 422);
    CHECK(post(svc, "/runs/" + id + "/adaptive-step", {{"n", 5}}).status == 422);

    REQUIRE(post(svc, "/runs/" + id + "/select", {{"step_index", 0}}).status == 200);
    auto r = post(svc, "/runs/" + id + "/adaptive-step");
    REQUIRE_MESSAGE(r.status == 200, r.body.dump());
    CHECK(r.body.at("iteration") == 1);
    CHECK(r.body.at("records").size() == 1);
    CHECK(r.body.at("records").at(0).at("override_used") == true);
    CHECK(r.body.contains("diagnostics"));

    r = post(svc, "/runs/" + id + "/adaptive-step", {{"n", 3}});
    REQUIRE(r.status == 200);
    CHECK(r.body.at("state") == "done");
    CHECK(r.body.at("records").at(0).at("override_used") == false);
    CHECK(post(svc, "/runs/" + id + "/adaptive-step").status == 409);
    CHECK(post(svc, "/runs/" + id + "/select", {{"step_index", 0}}).status == 409);

    const auto rec = get(svc, "/runs/" + id).body;
    CHECK(rec.at("adaptive").at("simulator_calls") == 34);
    const auto report = get(svc, "/runs/" + id + "/report").body;
    CHECK(report.at("history").size() == 4);
    CHECK(report.at("diagnostics").at("n") == 60);
    const auto pts = get(svc, "/runs/" + id + "/points").body;
    CHECK(pts.at("points").size() == 34);
    CHECK(pts.at("source").at(33) == "adaptive");
}

TEST_CASE("runs survive a restart") {
    TempDir dir("restart");
    std::vector<std::pair<std::string, json>> before;
    std::string prim;
    {
        RunService svc(options(dir));
        prim = create(svc, {{"experiment", "oracle_ring"}, {"kind", "prim"}, {"params", {{"n", 800}}}});
        const auto last = get(svc, "/runs/" + prim + "/trajectory").body.at("steps").size() - 1;
        REQUIRE(post(svc, "/runs/" + prim + "/select", {{"step_index", last}}).status == 200);
        REQUIRE(post(svc, "/runs/" + prim + "/cover-next").status == 200);
        create(svc, {{"experiment", "oracle_box"}, {"kind", "cart"}, {"params", {{"n", 400}}}});
        const auto ad = create(svc, {{"experiment", "norrebro"},
                                     {"kind", "adaptive"},
                                     {"overrides", {"lever.delta=5"}},
                                     {"params", small_adaptive_params()}});
        REQUIRE(post(svc, "/runs/" + ad + "/adaptive-step", {{"n", 2}}).status == 200);
        for (const auto& id : svc.run_ids())
            before.emplace_back(id, json{{"record", get(svc, "/runs/" + id).body},
                                         {"report", get(svc, "/runs/" + id + "/report").body},
                                         {"points", get(svc, "/runs/" + id + "/points").body}});
    }
    RunService svc(options(dir));
    REQUIRE(svc.run_ids().size() == before.size());
    for (const auto& [id, snap] : before) {
        CHECK_MESSAGE(get(svc, "/runs/" + id).body == snap.at("record"), id);
        CHECK_MESSAGE(get(svc, "/runs/" + id + "/report").body == snap.at("report"), id);
        CHECK_MESSAGE(get(svc, "/runs/" + id + "/points").body == snap.at("points"), id);
    }
    // Work continues where it left off and ids keep counting.
    REQUIRE(post(svc, "/runs/" + prim + "/select", {{"step_index", 0}}).status == 200);
    CHECK(post(svc, "/runs/" + prim + "/cover-next").status == 200);
    CHECK(post(svc, "/runs/run-000003/adaptive-step", {{"n", 2}}).body.at("state") == "done");
    CHECK(create(svc, {{"experiment", "oracle_box"}, {"kind", "prim"}, {"params", {{"n", 200}}}}) == "run-000004");
}

TEST_CASE("concurrent commands on one run are serialized") {
    TempDir dir("concurrent");
    RunService svc(options(dir));
    const auto id = create(svc, {{"experiment", "oracle_ring"}, {"kind", "prim"}, {"params", {{"n", 600}}}});
    std::atomic<int> ok{0}, conflict{0}, other{0};
    std::vector<std::thread> threads;
    for (int t = 0; t < 8; ++t) {
        threads.emplace_back([&, t] {
            for (int i = 0; i < 10; ++i) {
                const auto r = (i + t) % 2 == 0 ? post(svc, "/runs/" + id + "/select", {{"step_index", 1}})
                                                : post(svc, "/runs/" + id + "/cover-next");
                (r.status == 200 ? ok : r.status == 409 ? conflict : other)++;
                CHECK(get(svc, "/runs/" + id).status == 200);
                CHECK(get(svc, "/runs/" + id + "/points").status == 200);
            }
        });
    }
    for (auto& th : threads) th.join();
    CHECK(other == 0);
    CHECK(ok + conflict == 80);

    const auto rec = get(svc, "/runs/" + id).body;
    const auto transitions = rec.at("transitions").get<std::vector<std::string>>();
    for (std::size_t i = 1; i < transitions.size(); ++i)
        CHECK(legal_transition(run_state_from_string(transitions[i - 1]), run_state_from_string(transitions[i])));
    CHECK(transitions.back() == rec.at("state"));
    // Every committed command appends exactly one transition.
    CHECK(transitions.size() == 4 + static_cast<std::size_t>(ok.load()));

    std::vector<std::thread> creators;
    std::vector<std::string> ids(6);
    for (int t = 0; t < 6; ++t)
        creators.emplace_back([&, t] {
            ids[t] = post(svc, "/runs", {{"experiment", "oracle_box"}, {"kind", "cart"}, {"params", {{"n", 200}}}})
                         .body.at("run_id")
                         .get<std::string>();
        });
    for (auto& th : creators) th.join();
    std::sort(ids.begin(), ids.end());
    CHECK(std::unique(ids.begin(), ids.end()) == ids.end());
}

TEST_CASE("legal transitions") {
    using S = RunState;
    CHECK(legal_transition(S::Created, S::Sampling));
    CHECK(legal_transition(S::Sampling, S::Ready));
    CHECK(legal_transition(S::Ready, S::AwaitingSelection));
    CHECK(legal_transition(S::AwaitingSelection, S::Stepping));
    CHECK(legal_transition(S::Stepping, S::AwaitingSelection));
    CHECK(legal_transition(S::Stepping, S::Done));
    CHECK(legal_transition(S::Ready, S::Failed));
    CHECK_FALSE(legal_transition(S::Created, S::Ready));
    CHECK_FALSE(legal_transition(S::Done, S::Stepping));
    CHECK_FALSE(legal_transition(S::Failed, S::Failed));
    CHECK(legal_transition(S::Done, S::Failed));
}

TEST_CASE("HTTP front end and static UI mount") {
    TempDir dir("http");
    fs::create_directories(dir.path / "ui");
    write_file(dir.path / "ui" / "index.html", "<html>explorer</html>");
    RunService svc(options(dir));
    HttpServer server(svc, dir.path / "ui");
    const int port = server.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    std::thread loop([&] { server.listen(); });

    httplib::Client client("127.0.0.1", port);
    client.set_read_timeout(30);
    auto res = client.Post("/runs", json{{"experiment", "oracle_box"}, {"kind", "prim"}, {"params", {{"n", 300}}}}.dump(),
                           "application/json");
    REQUIRE(res);
    CHECK(res->status == 201);
    const auto id = json::parse(res->body).at("run_id").get<std::string>();

    res = client.Get("/runs/" + id + "/points?projection=x2,x1");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(json::parse(res->body).at("dims") == json({"x2", "x1"}));

    res = client.Get("/runs/nope");
    REQUIRE(res);
    CHECK(res->status == 404);
    CHECK(json::parse(res->body).at("schema_version") == kSchemaVersion);

    res = client.Get("/index.html");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(res->body == "<html>explorer</html>");
    res = client.Get("/");
    REQUIRE(res);
    CHECK(res->body == "<html>explorer</html>");

    server.stop();
    loop.join();
}
