// Regenerates tests/data/sim_reference.json: large-sample session statistics at
// the default simulator configuration. Run once; the output is checked in.

#include <fstream>
#include <iostream>
#include <string>

#include <json.hpp>

#include "dqkit/simulator.hpp"

int main(int argc, char** argv) {
    if (argc > 3 || (argc > 1 && argv[1][0] == '-')) {
        std::cerr << "usage: dqkit_make_sim_reference [out.json] [n_sessions]\n";
        return argc > 1 && std::string(argv[1]) == "--help" ? 0 : 1;
    }
    const std::string out = argc > 1 ? argv[1] : "sim_reference.json";
    const std::int64_t n = argc > 2 ? std::stoll(argv[2]) : 10000000;
    dqkit::SimConfig cfg;
    cfg.seed = 20240601;
    nlohmann::ordered_json j;
    j["seed"] = cfg.seed;
    j["n_sessions"] = n;
    j["k_scale"] = cfg.k_scale;
    j["alpha"] = cfg.alpha;
    j["budget_drain"] = cfg.budget_drain;
    j["n_creators"] = cfg.n_creators;
    for (double tau : {0.0, 0.05}) {
        cfg.tau_star = tau;
        for (auto mode : {dqkit::Mode::global_control, dqkit::Mode::global_treatment}) {
            if (tau == 0.0 && mode == dqkit::Mode::global_treatment) continue;
            const auto s = dqkit::session_stats(cfg, n, mode, 0);
            nlohmann::ordered_json e;
            e["tau_star"] = tau;
            e["mode"] = mode == dqkit::Mode::global_control ? "global_control" : "global_treatment";
            e["mean_videos"] = s.mean_videos;
            e["se_videos"] = s.se_videos;
            e["mean_watch_per_video"] = s.mean_watch_per_video;
            e["se_watch_per_video"] = s.se_watch_per_video;
            e["median_videos"] = s.median_videos;
            e["mean_total"] = s.mean_total;
            e["truncated"] = s.truncated;
            j["rows"].push_back(e);
        }
    }
    std::ofstream(out) << j.dump(2) << '\n';
    std::cerr << "wrote " << out << '\n';
    return 0;
}
