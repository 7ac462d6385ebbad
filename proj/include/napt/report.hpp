#pragma once

// Output helpers: RFC-4180 CSV and small SVG rate plots.

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace napt {

// Shortest round-trip decimal form ("nan", "inf", "-inf" for non-finite).
std::string format_double(double v);

class CsvWriter {
public:
    CsvWriter(std::ostream& os, const std::vector<std::string>& header);
    void row(const std::vector<std::string>& fields);
    void row(const std::vector<double>& values);
    static std::string escape(std::string_view field);

private:
    std::ostream& os_;
    std::size_t width_;
};

struct RatePlot {
    std::string title;
    std::string y_label;           // e.g. "log2 Var"
    std::vector<double> levels;    // x axis
    std::vector<double> log2_values;
    std::vector<double> log2_se;   // optional error bars (same length or empty)
    double slope = 0.0;
    double intercept = 0.0;
};

// Writes a standalone SVG with points, error bars, the fitted line and a
// slope annotation.
void write_rate_svg(std::ostream& os, const RatePlot& plot);

}  // namespace napt
