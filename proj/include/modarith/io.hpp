#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace modarith {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Shortest round-trip text for a double; fixed across runs and thread counts.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (v == 0.0) return "0";
    char buf[32];
    for (int prec = 6; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Writes through a temporary file and rename, so readers never see a torn file.
inline void write_file_atomic(const std::filesystem::path& p, std::string_view content) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    const std::filesystem::path tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, p);
}

// Comment lines start with '#'. Fields never contain commas or quotes.
class CsvTable {
public:
    std::vector<std::string> comments;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    CsvTable() = default;
    explicit CsvTable(std::vector<std::string> cols) : header(std::move(cols)) {}

    template <typename... Ts>
    void add(const Ts&... fields) {
        std::vector<std::string> r;
        (r.push_back(cell(fields)), ...);
        add_row(std::move(r));
    }

    void add_row(std::vector<std::string> r) {
        if (r.size() != header.size()) throw IoError("row has " + std::to_string(r.size()) + " fields, header has " + std::to_string(header.size()));
        for (const auto& f : r) {
            if (f.find_first_of(",\n\"") != std::string::npos) throw IoError("CSV field contains a separator: " + f);
        }
        rows.push_back(std::move(r));
    }

    std::size_t column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return i;
        }
        throw IoError("no column '" + std::string(name) + "'");
    }

    double number(std::size_t row, std::string_view col) const { return std::stod(rows.at(row).at(column(col))); }
    const std::string& text(std::size_t row, std::string_view col) const { return rows.at(row).at(column(col)); }

    std::string str() const {
        std::string out;
        for (const auto& c : comments) out += "# " + c + "\n";
        out += join(header) + "\n";
        for (const auto& r : rows) out += join(r) + "\n";
        return out;
    }

    void save(const std::filesystem::path& p) const { write_file_atomic(p, str()); }

    static CsvTable parse(std::string_view text) {
        CsvTable t;
        bool have_header = false;
        std::size_t pos = 0;
        while (pos < text.size()) {
            std::size_t end = text.find('\n', pos);
            if (end == std::string_view::npos) end = text.size();
            std::string_view line = text.substr(pos, end - pos);
            pos = end + 1;
            if (line.empty()) continue;
            if (line.front() == '#') {
                t.comments.emplace_back(line.size() > 2 ? line.substr(2) : std::string_view{});
                continue;
            }
            std::vector<std::string> fields;
            std::size_t s = 0;
            while (true) {
                const std::size_t c = line.find(',', s);
                fields.emplace_back(line.substr(s, c == std::string_view::npos ? std::string_view::npos : c - s));
                if (c == std::string_view::npos) break;
                s = c + 1;
            }
            if (!have_header) {
                t.header = std::move(fields);
                have_header = true;
            } else {
                if (fields.size() != t.header.size()) throw IoError("ragged CSV row");
                t.rows.push_back(std::move(fields));
            }
        }
        return t;
    }

    static CsvTable load(const std::filesystem::path& p) { return parse(read_file(p)); }

private:
    static std::string cell(const std::string& s) { return s; }
    static std::string cell(const char* s) { return s; }
    static std::string cell(std::string_view s) { return std::string(s); }
    static std::string cell(double v) { return format_number(v); }
    static std::string cell(float v) { return format_number(v); }
    static std::string cell(bool v) { return v ? "1" : "0"; }
    template <typename I>
        requires std::is_integral_v<I>
    static std::string cell(I v) {
        return std::to_string(v);
    }

    static std::string join(const std::vector<std::string>& r) {
        std::string s;
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (i) s += ',';
            s += r[i];
        }
        return s;
    }
};

// Minimal SVG plotting. Output depends only on the data.
namespace svg {

inline std::string escape(std::string_view s) {
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

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

class Document {
public:
    Document(double w, double h, std::string_view provenance) : w_(w), h_(h) {
        body_ += "<!-- " + escape(provenance) + " -->\n";
        body_ += "<rect x=\"0\" y=\"0\" width=\"" + fmt(w) + "\" height=\"" + fmt(h) + "\" fill=\"white\"/>\n";
    }

    void rect(double x, double y, double w, double h, std::string_view fill, std::string_view title = {}) {
        body_ += "<rect x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" width=\"" + fmt(w) + "\" height=\"" + fmt(h) + "\" fill=\"" +
                 std::string(fill) + "\"";
        if (title.empty()) {
            body_ += "/>\n";
        } else {
            body_ += "><title>" + escape(title) + "</title></rect>\n";
        }
    }

    void circle(double x, double y, double r, std::string_view fill) {
        body_ += "<circle cx=\"" + fmt(x) + "\" cy=\"" + fmt(y) + "\" r=\"" + fmt(r) + "\" fill=\"" + std::string(fill) +
                 "\" fill-opacity=\"0.7\"/>\n";
    }

    void line(double x1, double y1, double x2, double y2, std::string_view stroke = "black") {
        body_ += "<line x1=\"" + fmt(x1) + "\" y1=\"" + fmt(y1) + "\" x2=\"" + fmt(x2) + "\" y2=\"" + fmt(y2) + "\" stroke=\"" +
                 std::string(stroke) + "\"/>\n";
    }

    void text(double x, double y, std::string_view s, double size = 12, std::string_view anchor = "start") {
        body_ += "<text x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" font-size=\"" + fmt(size) + "\" font-family=\"sans-serif\" text-anchor=\"" +
                 std::string(anchor) + "\">" + escape(s) + "</text>\n";
    }

    std::string str() const {
        return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(w_) + "\" height=\"" + fmt(h_) + "\" viewBox=\"0 0 " + fmt(w_) +
               " " + fmt(h_) + "\">\n" + body_ + "</svg>\n";
    }

private:
    double w_, h_;
    std::string body_;
};

// Viridis-like ramp from dark blue to yellow.
inline std::string ramp(double t) {
    t = std::clamp(t, 0.0, 1.0);
    static constexpr double stops[5][3] = {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
    const double s = t * 4.0;
    const int i = std::min(3, static_cast<int>(s));
    const double f = s - i;
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(stops[i][0] + f * (stops[i + 1][0] - stops[i][0]))),
                  static_cast<int>(std::lround(stops[i][1] + f * (stops[i + 1][1] - stops[i][1]))),
                  static_cast<int>(std::lround(stops[i][2] + f * (stops[i + 1][2] - stops[i][2]))));
    return buf;
}

inline const char* palette(std::size_t i) {
    static constexpr const char* colors[] = {"#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377", "#bbbbbb"};
    return colors[i % 7];
}

// values is rows x cols, row-major; cell (r, c) drawn at column c, row r.
inline std::string heatmap(const std::vector<double>& values, int rows, int cols, std::string_view title, std::string_view provenance) {
    const double cell = 8.0, top = 30.0, left = 10.0;
    Document d(left * 2 + cell * cols, top + cell * rows + 10, provenance);
    d.text(left, 20, title, 14);
    double lo = 0.0, hi = 0.0;
    if (!values.empty()) {
        lo = *std::min_element(values.begin(), values.end());
        hi = *std::max_element(values.begin(), values.end());
    }
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const double v = values[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)];
            d.rect(left + c * cell, top + r * cell, cell, cell, ramp(hi > lo ? (v - lo) / (hi - lo) : 0.0));
        }
    }
    return d.str();
}

struct Series {
    std::string name;
    std::vector<double> values;
};

// Grouped vertical bars; one group per label, one bar per series.
inline std::string bar_chart(const std::vector<std::string>& labels, const std::vector<Series>& series, std::string_view title,
                             std::string_view provenance) {
    const double left = 50, top = 40, height = 220, group = std::max<double>(24.0, 12.0 * static_cast<double>(series.size()) + 8);
    const double width = group * static_cast<double>(labels.size());
    Document d(left + width + 160, top + height + 50, provenance);
    d.text(left, 20, title, 14);
    double hi = 0.0;
    for (const auto& s : series) {
        for (double v : s.values) hi = std::max(hi, v);
    }
    if (hi <= 0.0) hi = 1.0;
    d.line(left, top + height, left + width, top + height);
    d.line(left, top, left, top + height);
    d.text(left - 4, top + 4, fmt(hi), 10, "end");
    const double bar = (group - 8) / std::max<double>(1.0, static_cast<double>(series.size()));
    for (std::size_t g = 0; g < labels.size(); ++g) {
        for (std::size_t s = 0; s < series.size(); ++s) {
            const double v = g < series[s].values.size() ? series[s].values[g] : 0.0;
            const double h = height * v / hi;
            d.rect(left + static_cast<double>(g) * group + 4 + static_cast<double>(s) * bar, top + height - h, bar, h, palette(s),
                   series[s].name + " " + labels[g] + ": " + format_number(v));
        }
        d.text(left + (static_cast<double>(g) + 0.5) * group, top + height + 14, labels[g], 9, "middle");
    }
    for (std::size_t s = 0; s < series.size(); ++s) {
        d.rect(left + width + 20, top + 16.0 * static_cast<double>(s), 10, 10, palette(s));
        d.text(left + width + 36, top + 9 + 16.0 * static_cast<double>(s), series[s].name, 11);
    }
    return d.str();
}

// One horizontal bar per row, split into stacked segments (fractions of the row total).
inline std::string stacked_bars(const std::vector<std::string>& rows, const std::vector<std::string>& segments,
                                const std::vector<std::vector<double>>& counts, std::string_view title, std::string_view provenance) {
    const double left = 200, top = 40, bar_h = 18, width = 400;
    Document d(left + width + 140, top + (bar_h + 6) * static_cast<double>(rows.size()) + 20, provenance);
    d.text(10, 20, title, 14);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        double total = 0.0;
        for (double v : counts[r]) total += v;
        const double y = top + static_cast<double>(r) * (bar_h + 6);
        d.text(left - 6, y + 13, rows[r], 11, "end");
        double x = left;
        for (std::size_t s = 0; s < segments.size(); ++s) {
            const double w = total > 0 ? width * counts[r][s] / total : 0.0;
            if (w > 0) d.rect(x, y, w, bar_h, palette(s), segments[s] + ": " + format_number(counts[r][s]));
            x += w;
        }
        if (total == 0.0) d.text(left + 4, y + 13, "no data", 11);
    }
    for (std::size_t s = 0; s < segments.size(); ++s) {
        d.rect(left + width + 20, top + 16.0 * static_cast<double>(s), 10, 10, palette(s));
        d.text(left + width + 36, top + 9 + 16.0 * static_cast<double>(s), segments[s], 11);
    }
    return d.str();
}

struct ScatterGroup {
    std::string name;
    std::vector<double> x, y;
};

inline std::string scatter(const std::vector<ScatterGroup>& groups, std::string_view xlabel, std::string_view ylabel, std::string_view title,
                           std::string_view provenance) {
    const double left = 60, top = 40, w = 360, h = 300;
    Document d(left + w + 160, top + h + 50, provenance);
    d.text(left, 20, title, 14);
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    bool first = true;
    for (const auto& g : groups) {
        for (std::size_t i = 0; i < g.x.size(); ++i) {
            if (first) {
                x0 = x1 = g.x[i];
                y0 = y1 = g.y[i];
                first = false;
            }
            x0 = std::min(x0, g.x[i]);
            x1 = std::max(x1, g.x[i]);
            y0 = std::min(y0, g.y[i]);
            y1 = std::max(y1, g.y[i]);
        }
    }
    if (x1 - x0 < 1e-9) x1 = x0 + 1;
    if (y1 - y0 < 1e-9) y1 = y0 + 1;
    d.line(left, top + h, left + w, top + h);
    d.line(left, top, left, top + h);
    d.text(left + w / 2, top + h + 36, xlabel, 12, "middle");
    d.text(12, top + h / 2, ylabel, 12);
    d.text(left, top + h + 14, fmt(x0), 10, "middle");
    d.text(left + w, top + h + 14, fmt(x1), 10, "middle");
    d.text(left - 4, top + h, fmt(y0), 10, "end");
    d.text(left - 4, top + 8, fmt(y1), 10, "end");
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& g = groups[gi];
        for (std::size_t i = 0; i < g.x.size(); ++i) {
            d.circle(left + w * (g.x[i] - x0) / (x1 - x0), top + h - h * (g.y[i] - y0) / (y1 - y0), 4, palette(gi));
        }
        d.rect(left + w + 20, top + 16.0 * static_cast<double>(gi), 10, 10, palette(gi));
        d.text(left + w + 36, top + 9 + 16.0 * static_cast<double>(gi), g.name, 11);
    }
    return d.str();
}

}  // namespace svg
}  // namespace modarith
