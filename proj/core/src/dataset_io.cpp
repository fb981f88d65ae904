#include "dqkit/dataset_io.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "dqkit/error.hpp"
#include "dqkit/estimators.hpp"

namespace dqkit {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kFormat = "dqkit-steps-v1";

std::string strip_json_suffix(const std::string& s) {
    const std::string suffix = ".json";
    if (s.size() > suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0)
        return s.substr(0, s.size() - suffix.size());
    return s;
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
    if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

ojson config_json(const SimConfig& c) {
    ojson j;
    j["n_viewers"] = c.n_viewers;
    j["n_creators"] = c.n_creators;
    j["latent_dim"] = c.latent_dim;
    j["tau_star"] = c.tau_star;
    j["k_scale"] = c.k_scale;
    j["alpha"] = c.alpha;
    j["budget_drain"] = c.budget_drain;
    j["hard_budget"] = c.hard_budget;
    j["p_treat"] = c.p_treat;
    j["p_actual"] = c.p_actual ? json(*c.p_actual) : json(nullptr);
    j["max_steps"] = c.max_steps;
    j["seed"] = c.seed;
    j["creator_pool_seed"] = c.creator_pool_seed ? json(*c.creator_pool_seed) : json(nullptr);
    j["n_holdout"] = c.n_holdout;
    j["latent_lo"] = c.latent_lo;
    j["latent_hi"] = c.latent_hi;
    return j;
}

SimConfig config_from(const json& j) {
    static const char* known[] = {"n_viewers", "n_creators", "latent_dim",  "tau_star",  "k_scale",
                                  "alpha",     "budget_drain", "hard_budget", "p_treat",  "p_actual",
                                  "max_steps", "seed",       "creator_pool_seed", "n_holdout", "latent_lo",
                                  "latent_hi"};
    if (!j.is_object()) throw ConfigError("simulator config must be a JSON object");
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (const char* name : known) ok = ok || k == name;
        if (!ok) throw ConfigError("unknown simulator config key: " + k);
    }
    SimConfig c;
    read_opt(j, "n_viewers", c.n_viewers);
    read_opt(j, "n_creators", c.n_creators);
    read_opt(j, "latent_dim", c.latent_dim);
    read_opt(j, "tau_star", c.tau_star);
    read_opt(j, "k_scale", c.k_scale);
    read_opt(j, "alpha", c.alpha);
    read_opt(j, "budget_drain", c.budget_drain);
    read_opt(j, "hard_budget", c.hard_budget);
    read_opt(j, "p_treat", c.p_treat);
    if (j.contains("p_actual") && !j["p_actual"].is_null()) c.p_actual = j["p_actual"].get<double>();
    read_opt(j, "max_steps", c.max_steps);
    read_opt(j, "seed", c.seed);
    if (j.contains("creator_pool_seed") && !j["creator_pool_seed"].is_null())
        c.creator_pool_seed = j["creator_pool_seed"].get<std::uint64_t>();
    read_opt(j, "n_holdout", c.n_holdout);
    read_opt(j, "latent_lo", c.latent_lo);
    read_opt(j, "latent_hi", c.latent_hi);
    c.validate();
    return c;
}

std::ifstream open_in(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot open " + p.string());
    return in;
}

std::ofstream open_out(const std::filesystem::path& p) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + p.string());
    return out;
}

}  // namespace

DatasetPaths DatasetPaths::from_base(const std::filesystem::path& base) {
    const std::string b = strip_json_suffix(base.string());
    return {b + ".json", b + ".ndjson", b + ".holdout.ndjson"};
}

std::string assignments_digest(const std::vector<std::uint8_t>& assignments) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a 64
    for (std::uint8_t a : assignments) {
        h ^= a;
        h *= 0x100000001b3ULL;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "fnv1a64:%016" PRIx64, h);
    return buf;
}

std::string sim_config_to_json(const SimConfig& cfg) { return config_json(cfg).dump(2); }

SimConfig sim_config_from_json(const std::string& text) {
    try {
        return config_from(json::parse(text));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad simulator config: ") + e.what());
    }
}

void write_steps(std::ostream& out, const std::vector<SessionLog>& sessions) {
    char buf[320];
    for (const auto& s : sessions) {
        for (size_t t = 0; t < s.steps.size(); ++t) {
            const Step& st = s.steps[t];
            int n = std::snprintf(buf, sizeof buf,
                                  "{\"viewer_id\":%" PRIu64 ",\"step_index\":%zu,\"creator_id\":%d,\"action\":%d,"
                                  "\"reward\":%.17g,\"cumulative_watch\":%.17g",
                                  s.viewer_id, t, static_cast<int>(st.creator), static_cast<int>(st.action), st.reward,
                                  st.watch);
            out.write(buf, n);
            if (st.state >= 0) out << ",\"state\":" << st.state;
            if (t + 1 == s.steps.size()) {
                if (s.terminated) out << ",\"terminal\":true";
                if (s.truncated) out << ",\"truncated\":true";
            }
            out << "}\n";
        }
    }
}

std::vector<SessionLog> read_steps(std::istream& in) {
    std::vector<SessionLog> sessions;
    std::string line;
    std::int64_t line_no = 0;
    std::int64_t expected = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception&) {
            throw ModelError("line " + std::to_string(line_no), "malformed step record");
        }
        try {
            const auto viewer = j.at("viewer_id").get<std::uint64_t>();
            const auto idx = j.at("step_index").get<std::int64_t>();
            Step st;
            st.creator = j.at("creator_id").get<std::int32_t>();
            const int a = j.at("action").get<int>();
            if (a != 0 && a != 1) throw ModelError("line " + std::to_string(line_no), "action must be 0 or 1");
            st.action = static_cast<std::uint8_t>(a);
            st.reward = j.at("reward").get<double>();
            st.watch = j.at("cumulative_watch").get<double>();
            if (j.contains("state")) st.state = j["state"].get<std::int32_t>();
            const bool fresh = sessions.empty() || idx == 0 || sessions.back().viewer_id != viewer;
            if (fresh) {
                if (idx != 0) throw ModelError("line " + std::to_string(line_no), "session does not start at step 0");
                sessions.emplace_back();
                sessions.back().viewer_id = viewer;
                expected = 0;
            }
            if (idx != expected) throw ModelError("line " + std::to_string(line_no), "step_index out of order");
            ++expected;
            auto& s = sessions.back();
            s.steps.push_back(st);
            if (j.value("terminal", false)) s.terminated = true;
            if (j.value("truncated", false)) s.truncated = true;
        } catch (const json::exception& e) {
            throw ModelError("line " + std::to_string(line_no), std::string("bad step record: ") + e.what());
        }
    }
    return sessions;
}

void write_dataset(const ExperimentDataset& ds, const std::filesystem::path& base) {
    const auto paths = DatasetPaths::from_base(base);
    {
        auto out = open_out(paths.steps);
        write_steps(out, ds.sessions);
    }
    {
        auto out = open_out(paths.holdout);
        write_steps(out, ds.holdout_sessions);
    }
    ojson h;
    h["format"] = kFormat;
    h["config"] = ds.config ? config_json(*ds.config) : ojson(nullptr);
    h["p_nominal"] = ds.p_nominal;
    h["p_actual"] = ds.p_actual;
    h["n_sessions"] = ds.sessions.size();
    h["n_holdout_sessions"] = ds.holdout_sessions.size();
    h["n_steps"] = ds.n_steps();
    h["n_creators"] = ds.assignments.size();
    h["assignments_digest"] = assignments_digest(ds.assignments);
    h["assignments"] = ds.assignments;
    h["steps_file"] = paths.steps.filename().string();
    h["holdout_file"] = paths.holdout.filename().string();
    auto out = open_out(paths.header);
    out << h.dump(2) << '\n';
}

ExperimentDataset read_dataset(const std::filesystem::path& header_or_base) {
    const auto paths = DatasetPaths::from_base(header_or_base);
    json h;
    {
        auto in = open_in(paths.header);
        try {
            h = json::parse(in);
        } catch (const json::exception& e) {
            throw ModelError("header", std::string("malformed dataset header: ") + e.what());
        }
    }
    ExperimentDataset ds;
    try {
        ds.p_nominal = h.at("p_nominal").get<double>();
        ds.p_actual = h.value("p_actual", ds.p_nominal);
        ds.assignments = h.at("assignments").get<std::vector<std::uint8_t>>();
        if (h.contains("config") && !h["config"].is_null()) ds.config = config_from(h["config"]);
    } catch (const json::exception& e) {
        throw ModelError("header", std::string("bad dataset header: ") + e.what());
    }
    for (auto a : ds.assignments)
        if (a > 1) throw ModelError("assignments", "assignments must be 0 or 1");
    if (h.contains("assignments_digest") && h["assignments_digest"].get<std::string>() != assignments_digest(ds.assignments))
        throw ModelError("assignments_digest", "digest does not match the assignment table");
    const auto dir = paths.header.parent_path();
    const auto steps = h.contains("steps_file") ? dir / h["steps_file"].get<std::string>() : paths.steps;
    const auto holdout = h.contains("holdout_file") ? dir / h["holdout_file"].get<std::string>() : paths.holdout;
    {
        auto in = open_in(steps);
        ds.sessions = read_steps(in);
    }
    if (std::filesystem::exists(holdout)) {
        auto in = open_in(holdout);
        ds.holdout_sessions = read_steps(in);
    }
    if (h.contains("n_sessions") && h["n_sessions"].get<std::size_t>() != ds.sessions.size())
        throw ModelError("n_sessions", "session count differs from the header");
    validate_dataset(ds);
    return ds;
}

}  // namespace dqkit
