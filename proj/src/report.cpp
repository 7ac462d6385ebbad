#include "napt/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace napt {

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(std::ostream& os, const std::vector<std::string>& header) : os_(os), width_(header.size()) {
    row(header);
}

std::string CsvWriter::escape(std::string_view f) {
    if (f.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(f);
    std::string out = "\"";
    for (char c : f) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

void CsvWriter::row(const std::vector<std::string>& fields) {
    if (fields.size() != width_) throw std::invalid_argument("CsvWriter: row width does not match header");
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) os_ << ',';
        os_ << escape(fields[i]);
    }
    os_ << "\r\n";
}

void CsvWriter::row(const std::vector<double>& values) {
    std::vector<std::string> f;
    f.reserve(values.size());
    for (double v : values) f.push_back(format_double(v));
    row(f);
}

namespace {

std::string fixed(double v, int prec = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

std::string xml_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

void write_rate_svg(std::ostream& os, const RatePlot& p) {
    if (p.levels.size() != p.log2_values.size() || p.levels.empty())
        throw std::invalid_argument("write_rate_svg: need matching, non-empty data");
    const double W = 480, H = 360, ml = 60, mr = 20, mt = 40, mb = 50;

    double x0 = *std::min_element(p.levels.begin(), p.levels.end());
    double x1 = *std::max_element(p.levels.begin(), p.levels.end());
    double y0 = 1e300, y1 = -1e300;
    for (std::size_t i = 0; i < p.levels.size(); ++i) {
        const double se = p.log2_se.empty() ? 0.0 : p.log2_se[i];
        y0 = std::min({y0, p.log2_values[i] - se, p.intercept + p.slope * p.levels[i]});
        y1 = std::max({y1, p.log2_values[i] + se, p.intercept + p.slope * p.levels[i]});
    }
    if (x1 == x0) x1 = x0 + 1;
    if (y1 - y0 < 1e-9) y1 = y0 + 1;
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    auto sx = [&](double x) { return ml + (x - x0) / (x1 - x0) * (W - ml - mr); };
    auto sy = [&](double y) { return H - mb - (y - y0) / (y1 - y0) * (H - mt - mb); };

    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 "
       << W << ' ' << H << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
       << xml_escape(p.title) << "</text>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\"" << H - mb
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
       << "\" stroke=\"black\"/>\n";
    for (double lv : p.levels) {
        os << "<text x=\"" << fixed(sx(lv), 1) << "\" y=\"" << H - mb + 16
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << format_double(lv)
           << "</text>\n";
    }
    for (int t = 0; t <= 4; ++t) {
        const double y = y0 + (y1 - y0) * t / 4.0;
        os << "<text x=\"" << ml - 6 << "\" y=\"" << fixed(sy(y) + 4, 1)
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fixed(y, 2) << "</text>\n";
    }
    os << "<text x=\"" << W / 2 << "\" y=\"" << H - 12
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">level</text>\n";
    os << "<text x=\"16\" y=\"" << H / 2 << "\" transform=\"rotate(-90 16 " << H / 2
       << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(p.y_label)
       << "</text>\n";

    os << "<line x1=\"" << fixed(sx(x0), 1) << "\" y1=\"" << fixed(sy(p.intercept + p.slope * x0), 1) << "\" x2=\""
       << fixed(sx(x1), 1) << "\" y2=\"" << fixed(sy(p.intercept + p.slope * x1), 1)
       << "\" stroke=\"#c03030\" stroke-dasharray=\"6 3\"/>\n";
    for (std::size_t i = 0; i < p.levels.size(); ++i) {
        const double cx = sx(p.levels[i]), cy = sy(p.log2_values[i]);
        if (!p.log2_se.empty() && p.log2_se[i] > 0) {
            os << "<line x1=\"" << fixed(cx, 1) << "\" y1=\"" << fixed(sy(p.log2_values[i] - p.log2_se[i]), 1)
               << "\" x2=\"" << fixed(cx, 1) << "\" y2=\"" << fixed(sy(p.log2_values[i] + p.log2_se[i]), 1)
               << "\" stroke=\"#3050a0\"/>\n";
        }
        os << "<circle cx=\"" << fixed(cx, 1) << "\" cy=\"" << fixed(cy, 1) << "\" r=\"3.5\" fill=\"#3050a0\"/>\n";
    }
    os << "<text x=\"" << W - mr - 4 << "\" y=\"" << mt + 14
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#c03030\">slope = "
       << fixed(p.slope, 3) << "</text>\n";
    os << "</svg>\n";
}

}  // namespace napt
