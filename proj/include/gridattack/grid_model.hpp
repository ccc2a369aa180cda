#pragma once

#include <cstddef>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridattack {

struct CaseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Bus {
    int id = 0;
    double load_mw = 0.0;
    double gen_mw = 0.0;
    bool has_generator = false;

    bool operator==(const Bus&) const = default;
};

struct Line {
    int id = 0;
    int from_bus = 0;
    int to_bus = 0;
    double reactance_pu = 0.0;
    double thermal_limit_mw = 0.0;
    bool is_transformer = false;

    bool operator==(const Line&) const = default;
};

struct GridCase {
    double base_mva = 100.0;
    std::vector<Bus> buses;
    std::vector<Line> lines;
    int slack_bus = 1;

    std::size_t n_buses() const { return buses.size(); }
    std::size_t n_lines() const { return lines.size(); }
    const Bus& bus(int id) const { return buses.at(static_cast<std::size_t>(id - 1)); }
    const Line& line(int id) const { return lines.at(static_cast<std::size_t>(id - 1)); }

    bool operator==(const GridCase&) const = default;
};

// Throws CaseError on any invariant violation.
void validate(const GridCase& c);

GridCase parse_case(const std::string& json_text);
GridCase load_case(const std::string& path);
std::string case_to_json(const GridCase& c);

// IEEE 14-bus case with the thermal limits of the study, compiled in.
GridCase ieee14();
const std::string& ieee14_json();
// Two buses joined by one line, x = 0.5 pu.
GridCase toy2();

// Connectivity of the graph with the given lines removed (ids).
bool is_connected(const GridCase& c, const std::vector<int>& removed_lines = {});
// Lines whose removal disconnects the graph.
std::set<int> bridges(const GridCase& c);
bool is_islanding(const GridCase& c, int line);
std::vector<int> incident_lines(const GridCase& c, int bus);
// The bus on the other end of `line` from `bus`.
int other_end(const Line& l, int bus);

}  // namespace gridattack
