#include "cml/market.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>

#include "cml/error.hpp"

namespace cml {

namespace {

// Days since 1970-01-01 of a proleptic Gregorian date.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const auto yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

bool read_int(std::string_view s, std::size_t pos, std::size_t len, int& out) {
    if (pos + len > s.size()) return false;
    const char* first = s.data() + pos;
    const auto [ptr, ec] = std::from_chars(first, first + len, out);
    return ec == std::errc() && ptr == first + len;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

// RFC 4180 fields of one record; quoted fields may contain commas and "".
std::vector<std::string> split_record(std::string_view line, std::size_t line_no) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    bool was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            if (!trim(cur).empty()) throw InputError("stray quote in field", line_no);
            cur.clear();
            quoted = true;
            was_quoted = true;
        } else if (c == ',') {
            fields.push_back(was_quoted ? cur : std::string(trim(cur)));
            cur.clear();
            was_quoted = false;
        } else if (was_quoted) {
            if (c != ' ' && c != '\t') throw InputError("text after closing quote", line_no);
        } else {
            cur.push_back(c);
        }
    }
    if (quoted) throw InputError("unterminated quoted field", line_no);
    fields.push_back(was_quoted ? cur : std::string(trim(cur)));
    return fields;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

} // namespace

std::int64_t parse_timestamp(std::string_view text) {
    const std::string_view s = trim(text);
    if (s.empty()) throw InputError("empty timestamp");
    const bool integral = std::all_of(s.begin() + (s.front() == '-' ? 1 : 0), s.end(),
                                      [](char c) { return c >= '0' && c <= '9'; });
    if (integral && s.size() > (s.front() == '-' ? 1u : 0u) && (s.size() < 5 || s[4] != '-')) {
        std::int64_t v = 0;
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || ptr != s.data() + s.size()) throw InputError("bad epoch timestamp '" + std::string(s) + "'");
        return v;
    }
    int y = 0, mo = 0, d = 0, hh = 0, mi = 0, ss = 0;
    const auto bad = [&] { return InputError("bad ISO-8601 timestamp '" + std::string(s) + "'"); };
    if (s.size() < 10 || s[4] != '-' || s[7] != '-' || !read_int(s, 0, 4, y) || !read_int(s, 5, 2, mo) ||
        !read_int(s, 8, 2, d)) {
        throw bad();
    }
    if (mo < 1 || mo > 12 || d < 1 || d > 31) throw bad();
    std::size_t pos = 10;
    std::int64_t offset = 0;
    if (pos < s.size() && (s[pos] == 'T' || s[pos] == ' ')) {
        if (!read_int(s, pos + 1, 2, hh) || pos + 3 >= s.size() || s[pos + 3] != ':' || !read_int(s, pos + 4, 2, mi)) {
            throw bad();
        }
        pos += 6;
        if (pos < s.size() && s[pos] == ':') {
            if (!read_int(s, pos + 1, 2, ss)) throw bad();
            pos += 3;
            if (pos < s.size() && s[pos] == '.') {
                ++pos;
                while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
            }
        }
        if (hh > 23 || mi > 59 || ss > 60) throw bad();
        if (pos < s.size() && s[pos] == 'Z') {
            ++pos;
        } else if (pos < s.size() && (s[pos] == '+' || s[pos] == '-')) {
            int oh = 0, om = 0;
            if (!read_int(s, pos + 1, 2, oh) || pos + 3 >= s.size() || s[pos + 3] != ':' || !read_int(s, pos + 4, 2, om)) {
                throw bad();
            }
            offset = (s[pos] == '+' ? 1 : -1) * (oh * 3600 + om * 60);
            pos += 6;
        }
    }
    if (pos != s.size()) throw bad();
    return days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) * 86400 + hh * 3600 + mi * 60 + ss -
           offset;
}

MarketSeries parse_market_csv(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    int col_time = -1, col_who = -1, col_prob = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto header = split_record(line, line_no);
        for (std::size_t i = 0; i < header.size(); ++i) {
            const std::string name = lower(header[i]);
            if (name == "time") col_time = static_cast<int>(i);
            else if (name == "contestant") col_who = static_cast<int>(i);
            else if (name == "prob") col_prob = static_cast<int>(i);
        }
        if (col_time < 0 || col_who < 0 || col_prob < 0) {
            throw InputError("header must name the columns time,contestant,prob", line_no);
        }
        break;
    }
    if (col_time < 0) throw InputError("no data rows");
    const std::size_t width = static_cast<std::size_t>(std::max({col_time, col_who, col_prob})) + 1;

    MarketSeries series;
    std::map<std::string, std::size_t> index;
    std::map<std::int64_t, std::vector<std::pair<std::size_t, std::size_t>>> by_time; // contestant, sample
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto f = split_record(line, line_no);
        if (f.size() < width) throw InputError("expected time,contestant,prob", line_no);
        const std::int64_t t = [&] {
            try {
                return parse_timestamp(f[static_cast<std::size_t>(col_time)]);
            } catch (const InputError& e) {
                throw InputError(e.what(), line_no);
            }
        }();
        const std::string& who = f[static_cast<std::size_t>(col_who)];
        if (who.empty()) throw InputError("empty contestant id", line_no);
        const std::string& ptext = f[static_cast<std::size_t>(col_prob)];
        double p = 0.0;
        const auto [ptr, ec] = std::from_chars(ptext.data(), ptext.data() + ptext.size(), p);
        if (ec != std::errc() || ptr != ptext.data() + ptext.size()) {
            throw InputError("probability '" + ptext + "' is not a number", line_no);
        }
        if (!(p >= 0.0 && p <= 1.0)) throw InputError("probability " + ptext + " outside [0,1]", line_no);

        auto [it, fresh] = index.try_emplace(who, series.contestants.size());
        if (fresh) {
            series.contestants.push_back(who);
            series.paths.emplace_back();
        }
        auto& path = series.paths[it->second];
        if (!path.empty() && t <= path.back().time) {
            throw InputError("timestamps of '" + who + "' must be strictly increasing", line_no);
        }
        path.push_back({t, p});
        by_time[t].emplace_back(it->second, path.size() - 1);
        ++rows;
    }
    if (rows == 0) throw InputError("no data rows");

    const std::size_t k = series.contestants.size();
    for (const auto& [t, members] : by_time) {
        if (members.size() != k || k < 2) continue;
        double sum = 0.0;
        for (const auto& [c, s] : members) sum += series.paths[c][s].prob;
        if (std::abs(sum - 1.0) > kNormalisationSlack) {
            throw InputError("probabilities at time " + std::to_string(t) + " sum to " + std::to_string(sum));
        }
        if (sum != 1.0) {
            for (const auto& [c, s] : members) series.paths[c][s].prob /= sum;
            series.renormalised.push_back(t);
        }
    }
    return series;
}

MarketSeries ingest_market_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "': file not found or unreadable");
    return parse_market_csv(in);
}

Interpolation parse_interpolation(std::string_view name) {
    if (name == "linear") return Interpolation::linear;
    if (name == "step") return Interpolation::step;
    throw PreconditionError("interpolation must be linear or step");
}

MonitorState crossing_monitor(std::span<const double> path, const ThresholdPair& pair, Interpolation) {
    // A linear segment is monotone, so it touches a or b exactly when one of
    // its endpoints lies beyond the level, in the same order as the
    // endpoints; the step path visits the same values. Both reduce to
    // visiting the samples.
    if (path.empty()) return {};
    MonitorState m = start_monitor(path.front(), pair);
    for (std::size_t i = 1; i < path.size(); ++i) m.visit(path[i], pair);
    return m;
}

MarketStats crossing_stats_from_series(const MarketSeries& series, const ThresholdPair& pair, Interpolation interp) {
    MarketStats st;
    st.pair = pair;
    st.expected = bounds(pair);
    st.contestants = series.contestants;
    std::vector<double> values;
    for (const auto& path : series.paths) {
        values.clear();
        for (const auto& s : path) values.push_back(s.prob);
        st.monitors.push_back(crossing_monitor(values, pair, interp));
        st.n_b += st.monitors.back().reached_b ? 1 : 0;
        st.d_ab += st.monitors.back().downcrossings;
    }
    return st;
}

nlohmann::ordered_json to_json(const MarketStats& stats) {
    nlohmann::ordered_json j;
    j["a"] = stats.pair.a();
    j["b"] = stats.pair.b();
    auto& per = j["contestants"];
    per = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < stats.contestants.size(); ++i) {
        const auto& m = stats.monitors[i];
        nlohmann::ordered_json e;
        e["id"] = stats.contestants[i];
        e["reached_b"] = m.reached_b;
        e["downcrossings"] = m.downcrossings;
        e["status"] = std::string(to_string(m.status));
        e["sup"] = m.sup_value;
        per.push_back(std::move(e));
    }
    j["N_b"] = stats.n_b;
    j["D_ab"] = stats.d_ab;
    j["expected_N_b"] = stats.expected.mean_Nb;
    j["expected_D_ab"] = stats.expected.mean_Dab;
    j["note"] = "counts are taken on the sampled path; crossings between quotes are missed";
    return j;
}

} // namespace cml
