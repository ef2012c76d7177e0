#include "shapfor/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace shapfor {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) {
        const auto b = field.find_first_not_of(" \t\r\"");
        const auto e = field.find_last_not_of(" \t\r\"");
        out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

Dataset read_csv(std::istream& in, const std::string& response) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") != std::string::npos) break;
    }
    if (line_no == 0 || line.find_first_not_of(" \t\r") == std::string::npos) {
        throw ValidationError("CSV is empty; a header row is required");
    }
    const auto header = split_fields(line);
    const auto resp = std::find(header.begin(), header.end(), response);
    if (resp == header.end()) {
        std::string avail;
        for (const auto& h : header) avail += (avail.empty() ? "" : ", ") + h;
        throw ValidationError("response column '" + response + "' not found; available columns: " + avail);
    }
    const auto resp_col = static_cast<std::size_t>(resp - header.begin());

    Dataset data;
    data.p = static_cast<std::int32_t>(header.size() - 1);
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (c != resp_col) data.names.push_back(header[c]);
    }
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto fields = split_fields(line);
        if (fields.size() != header.size()) {
            throw ValidationError("CSV line " + std::to_string(line_no) + ": expected " +
                                  std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
        }
        for (std::size_t c = 0; c < fields.size(); ++c) {
            const std::string& f = fields[c];
            char* end = nullptr;
            const double v = std::strtod(f.c_str(), &end);
            if (f.empty() || end != f.c_str() + f.size()) {
                throw ValidationError("CSV line " + std::to_string(line_no) + ", column " + std::to_string(c + 1) +
                                      " ('" + header[c] + "'): cannot parse '" + f + "' as a number");
            }
            if (!std::isfinite(v)) {
                throw ValidationError("CSV line " + std::to_string(line_no) + ", column " + std::to_string(c + 1) +
                                      " ('" + header[c] + "'): non-finite value");
            }
            if (c == resp_col) {
                data.y.push_back(v);
            } else {
                data.X.push_back(v);
            }
        }
        ++data.n;
    }
    if (data.n < 2) throw ValidationError("CSV needs at least 2 data rows, found " + std::to_string(data.n));
    data.validate();
    return data;
}

Dataset read_csv_file(const std::string& path, const std::string& response) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open CSV file '" + path + "'");
    return read_csv(in, response);
}

std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_csv(std::ostream& out, const Dataset& data, const std::string& response) {
    for (std::int32_t j = 0; j < data.p; ++j) {
        const auto uj = static_cast<std::size_t>(j);
        out << (uj < data.names.size() ? data.names[uj] : "x" + std::to_string(j + 1)) << ',';
    }
    out << response << '\n';
    for (std::size_t i = 0; i < data.n; ++i) {
        for (std::int32_t j = 0; j < data.p; ++j) out << format_real(data.at(i, j)) << ',';
        out << format_real(data.y[i]) << '\n';
    }
}

namespace {

nlohmann::json estimate_json(const IndexEstimate& e) {
    nlohmann::json q = nlohmann::json::object();
    for (const auto& [level, value] : e.quantiles) q[format_real(level)] = value;
    return {{"point", e.point}, {"lo", e.lo()}, {"hi", e.hi()}, {"quantiles", q}};
}

const char* normalization_name(Normalization n) {
    switch (n) {
        case Normalization::Raw: return "raw";
        case Normalization::Normalized: return "normalized";
        case Normalization::Both: return "both";
    }
    return "both";
}

bool want_raw(const SensitivityReport& r) { return r.normalization != Normalization::Normalized; }
bool want_norm(const SensitivityReport& r) { return r.normalization != Normalization::Raw; }

}  // namespace

nlohmann::json report_to_json(const SensitivityReport& r) {
    nlohmann::json meta = {{"method", r.method},
                           {"shapley_mode", r.shapley_mode},
                           {"normalization", normalization_name(r.normalization)},
                           {"normalization_convention", r.normalization_convention},
                           {"p", r.p},
                           {"m", r.m},
                           {"n_draw", r.n_draw},
                           {"seed", r.seed},
                           {"levels", r.levels},
                           {"measure", "product-uniform"}};
    for (const auto& [k, v] : r.extra) meta["config"][k] = v;
    nlohmann::json inputs = nlohmann::json::array();
    for (const auto& in : r.inputs) {
        nlohmann::json rec = {{"input", in.input}, {"name", in.name}};
        if (want_raw(r)) {
            rec["V"] = estimate_json(in.V);
            rec["T"] = estimate_json(in.T);
            rec["S"] = estimate_json(in.S);
        }
        if (want_norm(r)) {
            rec["normalized"] = {{"V", estimate_json(in.V_norm)},
                                 {"T", estimate_json(in.T_norm)},
                                 {"S", estimate_json(in.S_norm)}};
        }
        inputs.push_back(std::move(rec));
    }
    return {{"method", r.method},
            {"metadata", meta},
            {"variance", estimate_json(r.variance)},
            {"sigma2", estimate_json(r.sigma2)},
            {"inputs", inputs}};
}

std::string report_to_text(const SensitivityReport& r) {
    std::ostringstream out;
    char buf[256];
    out << "method: " << r.method << "   shapley: " << r.shapley_mode << "   p: " << r.p << "   draws: " << r.n_draw
        << "   m: " << r.m << "   seed: " << r.seed << '\n';
    std::snprintf(buf, sizeof buf, "variance  point %s  lo %s  hi %s\n", format_real(r.variance.point).c_str(),
                  format_real(r.variance.lo()).c_str(), format_real(r.variance.hi()).c_str());
    out << buf;
    std::snprintf(buf, sizeof buf, "sigma2    point %s  lo %s  hi %s\n", format_real(r.sigma2.point).c_str(),
                  format_real(r.sigma2.lo()).c_str(), format_real(r.sigma2.hi()).c_str());
    out << buf;
    auto block = [&](const char* title, auto pick) {
        out << '\n' << title << '\n';
        std::snprintf(buf, sizeof buf, "%-12s %-5s %24s %24s %24s\n", "input", "index", "point", "lo", "hi");
        out << buf;
        for (const auto& in : r.inputs) {
            const IndexEstimate* es[3];
            pick(in, es);
            const char* tags[3] = {"V", "T", "S"};
            for (int k = 0; k < 3; ++k) {
                std::snprintf(buf, sizeof buf, "%-12s %-5s %24s %24s %24s\n", in.name.c_str(), tags[k],
                              format_real(es[k]->point).c_str(), format_real(es[k]->lo()).c_str(),
                              format_real(es[k]->hi()).c_str());
                out << buf;
            }
        }
    };
    if (want_raw(r)) {
        block("raw indices", [](const InputIndices& in, const IndexEstimate** es) {
            es[0] = &in.V;
            es[1] = &in.T;
            es[2] = &in.S;
        });
    }
    if (want_norm(r)) {
        block("normalized indices", [](const InputIndices& in, const IndexEstimate** es) {
            es[0] = &in.V_norm;
            es[1] = &in.T_norm;
            es[2] = &in.S_norm;
        });
    }
    return out.str();
}

void write_plot_csv(std::ostream& out, const SensitivityReport& r) {
    out << "input,index_type,point,lo,hi\n";
    auto row = [&](const InputIndices& in, const char* type, const IndexEstimate& e) {
        out << in.name << ',' << type << ',' << format_real(e.point) << ',' << format_real(e.lo()) << ','
            << format_real(e.hi()) << '\n';
    };
    // Grouped by index type so each type forms one contiguous block of p rows.
    if (want_raw(r)) {
        for (const auto& in : r.inputs) row(in, "V", in.V);
        for (const auto& in : r.inputs) row(in, "T", in.T);
        for (const auto& in : r.inputs) row(in, "S", in.S);
    }
    if (want_norm(r)) {
        for (const auto& in : r.inputs) row(in, "V_norm", in.V_norm);
        for (const auto& in : r.inputs) row(in, "T_norm", in.T_norm);
        for (const auto& in : r.inputs) row(in, "S_norm", in.S_norm);
    }
}

void write_draws_csv(std::ostream& out, const SensitivityReport& r) {
    out << "draw,input,V,T,S,V_norm,T_norm,S_norm\n";
    for (const auto& in : r.inputs) {
        if (!in.S.draws) throw ValidationError("per-draw values were not retained");
        const std::size_t nd = in.S.draws->size();
        for (std::size_t i = 0; i < nd; ++i) {
            out << i << ',' << in.name << ',' << format_real((*in.V.draws)[i]) << ','
                << format_real((*in.T.draws)[i]) << ',' << format_real((*in.S.draws)[i]) << ','
                << format_real((*in.V_norm.draws)[i]) << ',' << format_real((*in.T_norm.draws)[i]) << ','
                << format_real((*in.S_norm.draws)[i]) << '\n';
        }
    }
}

}  // namespace shapfor
