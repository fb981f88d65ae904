#include <json.hpp>

#include "dqkit/error.hpp"
#include "dqkit/mdp.hpp"

namespace dqkit {

using nlohmann::json;

namespace {

template <class T>
T field(const json& doc, const char* key) {
    if (!doc.contains(key)) throw ModelError(key, "missing field");
    try {
        return doc.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ModelError(key, e.what());
    }
}

}  // namespace

TabularMDP mdp_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ModelError("document", e.what());
    }
    const int n = field<int>(doc, "n_states");
    const int A = field<int>(doc, "n_actions");
    if (n < 1) throw ModelError("n_states", "must be positive");
    if (A < 1) throw ModelError("n_actions", "must be positive");

    auto P_raw = field<std::vector<std::vector<std::vector<double>>>>(doc, "P");
    auto r_raw = field<std::vector<std::vector<double>>>(doc, "r");
    auto rho_raw = field<std::vector<double>>(doc, "rho_init");
    std::vector<int> absorbing;
    if (doc.contains("absorbing") && !doc.at("absorbing").is_null())
        absorbing = field<std::vector<int>>(doc, "absorbing");

    if (static_cast<int>(P_raw.size()) != A) throw ModelError("P", "outer length differs from n_actions");
    std::vector<Matrix> P;
    for (int a = 0; a < A; ++a) {
        const auto& Pa = P_raw[static_cast<size_t>(a)];
        if (static_cast<int>(Pa.size()) != n) throw ModelError("P[" + std::to_string(a) + "]", "row count differs from n_states");
        Matrix M(n, n);
        for (int s = 0; s < n; ++s) {
            if (static_cast<int>(Pa[static_cast<size_t>(s)].size()) != n)
                throw ModelError("P[" + std::to_string(a) + "][" + std::to_string(s) + "]", "length differs from n_states");
            for (int t = 0; t < n; ++t) M(s, t) = Pa[static_cast<size_t>(s)][static_cast<size_t>(t)];
        }
        P.push_back(std::move(M));
    }
    if (static_cast<int>(r_raw.size()) != n) throw ModelError("r", "row count differs from n_states");
    Matrix r(n, A);
    for (int s = 0; s < n; ++s) {
        if (static_cast<int>(r_raw[static_cast<size_t>(s)].size()) != A)
            throw ModelError("r[" + std::to_string(s) + "]", "length differs from n_actions");
        for (int a = 0; a < A; ++a) r(s, a) = r_raw[static_cast<size_t>(s)][static_cast<size_t>(a)];
    }
    if (static_cast<int>(rho_raw.size()) != n) throw ModelError("rho_init", "length differs from n_states");
    Vector rho = Eigen::Map<Vector>(rho_raw.data(), n);
    return TabularMDP(std::move(P), std::move(r), std::move(rho), std::move(absorbing));
}

std::string mdp_to_json(const TabularMDP& mdp) {
    const int n = mdp.n_states(), A = mdp.n_actions();
    json doc;
    doc["n_states"] = n;
    doc["n_actions"] = A;
    json P = json::array();
    for (int a = 0; a < A; ++a) {
        json Pa = json::array();
        for (int s = 0; s < n; ++s) {
            json row = json::array();
            for (int t = 0; t < n; ++t) row.push_back(mdp.P(a)(s, t));
            Pa.push_back(row);
        }
        P.push_back(Pa);
    }
    doc["P"] = P;
    json r = json::array();
    for (int s = 0; s < n; ++s) {
        json row = json::array();
        for (int a = 0; a < A; ++a) row.push_back(mdp.r()(s, a));
        r.push_back(row);
    }
    doc["r"] = r;
    doc["rho_init"] = std::vector<double>(mdp.rho_init().data(), mdp.rho_init().data() + n);
    doc["absorbing"] = mdp.absorbing();
    return doc.dump(2);
}

}  // namespace dqkit
