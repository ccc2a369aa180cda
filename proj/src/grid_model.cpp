#include "gridattack/grid_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <queue>
#include <set>
#include <sstream>

#include <json.hpp>

namespace gridattack {

namespace detail {
extern const char* const kIeee14Json;
}

using nlohmann::json;

void validate(const GridCase& c) {
    if (!(c.base_mva > 0)) throw CaseError("base_mva must be positive");
    if (c.buses.empty()) throw CaseError("case has no buses");
    for (std::size_t k = 0; k < c.buses.size(); ++k) {
        const Bus& b = c.buses[k];
        if (b.id != static_cast<int>(k + 1)) throw CaseError("bus ids must be contiguous 1..n in order");
        if (!(b.load_mw >= 0)) throw CaseError("bus " + std::to_string(b.id) + " has negative load");
        if (!std::isfinite(b.gen_mw)) throw CaseError("bus " + std::to_string(b.id) + " has non-finite generation");
        if (b.gen_mw != 0.0 && !b.has_generator)
            throw CaseError("bus " + std::to_string(b.id) + " generates without a generator");
    }
    const int nb = static_cast<int>(c.buses.size());
    if (c.slack_bus < 1 || c.slack_bus > nb) throw CaseError("unknown slack bus " + std::to_string(c.slack_bus));
    for (std::size_t k = 0; k < c.lines.size(); ++k) {
        const Line& l = c.lines[k];
        const std::string tag = "line " + std::to_string(l.id);
        if (l.id != static_cast<int>(k + 1)) throw CaseError("line ids must be contiguous 1..n in order");
        if (l.from_bus < 1 || l.from_bus > nb || l.to_bus < 1 || l.to_bus > nb)
            throw CaseError(tag + " references an unknown bus");
        if (l.from_bus == l.to_bus) throw CaseError(tag + " is a self-loop");
        if (!(l.reactance_pu > 0)) throw CaseError(tag + " has nonpositive reactance");
        if (!(l.thermal_limit_mw > 0)) throw CaseError(tag + " has nonpositive thermal limit");
    }
    if (!is_connected(c)) throw CaseError("network graph is disconnected");
    double balance = 0.0;
    for (const Bus& b : c.buses) balance += b.gen_mw - b.load_mw;
    if (std::abs(balance) / c.base_mva > 1e-6) throw CaseError("total generation does not match total load");
}

GridCase parse_case(const std::string& json_text) {
    GridCase c;
    try {
        const json j = json::parse(json_text);
        c.base_mva = j.at("base_mva").get<double>();
        c.slack_bus = j.at("slack_bus").get<int>();
        for (const auto& b : j.at("buses")) {
            c.buses.push_back({b.at("id").get<int>(), b.at("load_mw").get<double>(), b.at("gen_mw").get<double>(),
                               b.at("has_generator").get<bool>()});
        }
        for (const auto& l : j.at("lines")) {
            c.lines.push_back({l.at("id").get<int>(), l.at("from").get<int>(), l.at("to").get<int>(),
                               l.at("x_pu").get<double>(), l.at("limit_mw").get<double>(),
                               l.at("is_transformer").get<bool>()});
        }
    } catch (const json::exception& e) {
        throw CaseError(std::string("case parse failure: ") + e.what());
    }
    validate(c);
    return c;
}

GridCase load_case(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CaseError("cannot open case file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_case(ss.str());
}

std::string case_to_json(const GridCase& c) {
    json j;
    j["base_mva"] = c.base_mva;
    j["slack_bus"] = c.slack_bus;
    j["buses"] = json::array();
    for (const Bus& b : c.buses)
        j["buses"].push_back({{"id", b.id}, {"load_mw", b.load_mw}, {"gen_mw", b.gen_mw}, {"has_generator", b.has_generator}});
    j["lines"] = json::array();
    for (const Line& l : c.lines)
        j["lines"].push_back({{"id", l.id},
                              {"from", l.from_bus},
                              {"to", l.to_bus},
                              {"x_pu", l.reactance_pu},
                              {"limit_mw", l.thermal_limit_mw},
                              {"is_transformer", l.is_transformer}});
    return j.dump(2);
}

const std::string& ieee14_json() {
    static const std::string text(detail::kIeee14Json);
    return text;
}

GridCase ieee14() {
    static const GridCase c = parse_case(ieee14_json());
    return c;
}

GridCase toy2() {
    GridCase c;
    c.base_mva = 100.0;
    c.slack_bus = 2;
    c.buses = {{1, 0.0, 100.0, true}, {2, 100.0, 0.0, false}};
    c.lines = {{1, 1, 2, 0.5, 150.0, false}};
    validate(c);
    return c;
}

bool is_connected(const GridCase& c, const std::vector<int>& removed_lines) {
    const std::size_t nb = c.n_buses();
    if (nb == 0) return true;
    const std::set<int> removed(removed_lines.begin(), removed_lines.end());
    std::vector<std::vector<int>> adj(nb + 1);
    for (const Line& l : c.lines) {
        if (removed.contains(l.id)) continue;
        adj[l.from_bus].push_back(l.to_bus);
        adj[l.to_bus].push_back(l.from_bus);
    }
    std::vector<char> seen(nb + 1, 0);
    std::queue<int> q;
    q.push(1);
    seen[1] = 1;
    std::size_t count = 1;
    while (!q.empty()) {
        const int v = q.front();
        q.pop();
        for (int w : adj[v]) {
            if (!seen[w]) {
                seen[w] = 1;
                ++count;
                q.push(w);
            }
        }
    }
    return count == nb;
}

std::set<int> bridges(const GridCase& c) {
    // Iterative Tarjan low-link over line ids, so parallel lines never count as bridges.
    const int nb = static_cast<int>(c.n_buses());
    std::vector<std::vector<std::pair<int, int>>> adj(nb + 1);
    for (const Line& l : c.lines) {
        adj[l.from_bus].emplace_back(l.to_bus, l.id);
        adj[l.to_bus].emplace_back(l.from_bus, l.id);
    }
    std::vector<int> disc(nb + 1, 0), low(nb + 1, 0);
    std::set<int> out;
    int timer = 0;
    struct Frame {
        int v, via;
        std::size_t next;
    };
    for (int root = 1; root <= nb; ++root) {
        if (disc[root]) continue;
        std::vector<Frame> stack{{root, 0, 0}};
        disc[root] = low[root] = ++timer;
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next < adj[f.v].size()) {
                const auto [w, id] = adj[f.v][f.next++];
                if (id == f.via) continue;
                if (disc[w]) {
                    low[f.v] = std::min(low[f.v], disc[w]);
                } else {
                    disc[w] = low[w] = ++timer;
                    stack.push_back({w, id, 0});
                }
            } else {
                const Frame done = f;
                stack.pop_back();
                if (!stack.empty()) {
                    const int parent = stack.back().v;
                    low[parent] = std::min(low[parent], low[done.v]);
                    if (low[done.v] > disc[parent]) out.insert(done.via);
                }
            }
        }
    }
    return out;
}

bool is_islanding(const GridCase& c, int line) {
    if (line < 1 || line > static_cast<int>(c.n_lines())) throw CaseError("invalid line id " + std::to_string(line));
    return bridges(c).contains(line);
}

std::vector<int> incident_lines(const GridCase& c, int bus) {
    if (bus < 1 || bus > static_cast<int>(c.n_buses())) throw CaseError("invalid bus id " + std::to_string(bus));
    std::vector<int> out;
    for (const Line& l : c.lines)
        if (l.from_bus == bus || l.to_bus == bus) out.push_back(l.id);
    return out;
}

int other_end(const Line& l, int bus) { return l.from_bus == bus ? l.to_bus : l.from_bus; }

}  // namespace gridattack
