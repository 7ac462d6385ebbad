#include <cstdio>
#include <fstream>
#include <sstream>

#include "napt/density.hpp"

namespace napt {

namespace {

constexpr const char* kMagic = "napt-mdn";
constexpr int kVersion = 1;

std::string hex(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

double parse_hex(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') throw IoError("checkpoint: bad number '" + s + "'");
    return v;
}

void write_vec(std::ostream& os, const char* tag, const std::vector<double>& v) {
    os << tag << ' ' << v.size();
    for (double e : v) os << ' ' << hex(e);
    os << '\n';
}

std::vector<double> read_vec(std::istream& is, const char* tag) {
    std::string t;
    std::size_t n = 0;
    if (!(is >> t >> n) || t != tag) throw IoError(std::string("checkpoint: expected '") + tag + "'");
    std::vector<double> v(n);
    std::string tok;
    for (auto& e : v) {
        if (!(is >> tok)) throw IoError(std::string("checkpoint: truncated '") + tag + "'");
        e = parse_hex(tok);
    }
    return v;
}

}  // namespace

void write_checkpoint(std::ostream& os, const ConditionalDensity& cd) {
    const auto& a = cd.arch();
    os << kMagic << ' ' << kVersion << '\n';
    os << "input_dim " << a.input_dim << '\n';
    os << "theta_dim " << a.theta_dim << '\n';
    os << "hidden " << a.hidden_widths.size();
    for (auto w : a.hidden_widths) os << ' ' << w;
    os << '\n';
    os << "components " << a.n_components << '\n';
    os << "activation " << to_string(a.activation) << '\n';
    write_vec(os, "input_shift", cd.input_norm().shift);
    write_vec(os, "input_scale", cd.input_norm().scale);
    write_vec(os, "theta_shift", cd.theta_norm().shift);
    write_vec(os, "theta_scale", cd.theta_norm().scale);
    write_vec(os, "params", cd.params().values);
    if (!os) throw IoError("checkpoint: write failed");
}

ConditionalDensity read_checkpoint(std::istream& is) {
    std::string magic, key;
    int version = 0;
    if (!(is >> magic >> version) || magic != kMagic) throw IoError("checkpoint: not an napt-mdn file");
    if (version != kVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));

    MdnArchitecture a;
    auto expect = [&](const char* k) {
        if (!(is >> key) || key != k) throw IoError(std::string("checkpoint: expected '") + k + "'");
    };
    std::string act;
    std::size_t nh = 0;
    expect("input_dim");
    is >> a.input_dim;
    expect("theta_dim");
    is >> a.theta_dim;
    expect("hidden");
    is >> nh;
    a.hidden_widths.assign(nh, 0);
    for (auto& w : a.hidden_widths) is >> w;
    expect("components");
    is >> a.n_components;
    expect("activation");
    is >> act;
    if (!is) throw IoError("checkpoint: truncated header");
    try {
        a.activation = activation_from_string(act);
        a.validate();
    } catch (const std::invalid_argument& e) {
        throw IoError(std::string("checkpoint: ") + e.what());
    }

    Standardizer in{read_vec(is, "input_shift"), read_vec(is, "input_scale")};
    Standardizer th{read_vec(is, "theta_shift"), read_vec(is, "theta_scale")};
    ParamVector p;
    p.values = read_vec(is, "params");
    p.layout = ParamLayout::for_architecture(a);
    try {
        return ConditionalDensity(a, std::move(p), std::move(in), std::move(th));
    } catch (const std::invalid_argument& e) {
        throw IoError(std::string("checkpoint: ") + e.what());
    }
}

void save_checkpoint(const std::string& path, const ConditionalDensity& cd) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    write_checkpoint(os, cd);
}

ConditionalDensity load_checkpoint(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open checkpoint '" + path + "'");
    return read_checkpoint(is);
}

}  // namespace napt
