#include "sncl/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sncl/common.hpp"

namespace sncl::svg {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string num(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

} // namespace

std::string LineChart::render() const {
    const double ml = 58, mr = 116, mt = 34, mb = 44; // margins; right holds the legend
    const double pw = width - ml - mr;
    const double ph = height - mt - mb;

    double xmin = 0, xmax = 1, ymin = y_min, ymax = y_max;
    bool any = false;
    for (const Series& s : series) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!any) {
                xmin = xmax = s.x[i];
                any = true;
            } else {
                xmin = std::min(xmin, s.x[i]);
                xmax = std::max(xmax, s.x[i]);
            }
        }
    }
    if (!(y_min < y_max)) {
        ymin = 0;
        ymax = 1e-9;
        for (const Series& s : series) {
            for (double v : s.y) {
                ymin = std::min(ymin, v);
                ymax = std::max(ymax, v);
            }
        }
    }
    if (xmax <= xmin) xmax = xmin + 1;
    if (ymax <= ymin) ymax = ymin + 1;

    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
       << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    os << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\" "
          "font-family=\"sans-serif\">" << escape(title) << "</text>\n";

    // Axes and ticks.
    os << "<g stroke=\"#333\" stroke-width=\"1\">\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
       << mt + ph << "\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
       << "\"/>\n";
    os << "</g>\n";
    const int ticks = 5;
    os << "<g font-size=\"10\" font-family=\"sans-serif\" fill=\"#333\">\n";
    for (int i = 0; i <= ticks; ++i) {
        const double tx = xmin + (xmax - xmin) * i / ticks;
        const double ty = ymin + (ymax - ymin) * i / ticks;
        os << "<text x=\"" << num(px(tx)) << "\" y=\"" << mt + ph + 14
           << "\" text-anchor=\"middle\">" << num(std::round(tx * 100) / 100) << "</text>\n";
        os << "<text x=\"" << ml - 6 << "\" y=\"" << num(py(ty) + 3)
           << "\" text-anchor=\"end\">" << num(std::round(ty * 1000) / 1000) << "</text>\n";
        os << "<line x1=\"" << ml << "\" y1=\"" << num(py(ty)) << "\" x2=\"" << ml + pw
           << "\" y2=\"" << num(py(ty)) << "\" stroke=\"#ddd\" stroke-width=\"0.5\"/>\n";
    }
    os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 8
       << "\" text-anchor=\"middle\">" << escape(x_label) << "</text>\n";
    os << "<text x=\"14\" y=\"" << mt + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
       << mt + ph / 2 << ")\">" << escape(y_label) << "</text>\n";
    os << "</g>\n";

    for (std::size_t si = 0; si < series.size(); ++si) {
        const Series& s = series[si];
        const char* color = kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.6\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (i) os << ' ';
            os << num(px(s.x[i])) << ',' << num(py(s.y[i]));
        }
        os << "\"/>\n";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            os << "<circle cx=\"" << num(px(s.x[i])) << "\" cy=\"" << num(py(s.y[i]))
               << "\" r=\"2.2\" fill=\"" << color << "\"/>\n";
        }
        const double ly = mt + 14.0 * static_cast<double>(si);
        os << "<line x1=\"" << ml + pw + 8 << "\" y1=\"" << num(ly) << "\" x2=\"" << ml + pw + 26
           << "\" y2=\"" << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"1.6\"/>\n";
        os << "<text x=\"" << ml + pw + 30 << "\" y=\"" << num(ly + 3)
           << "\" font-size=\"10\" font-family=\"sans-serif\">" << escape(s.name) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

void LineChart::write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ValueError("cannot write chart: " + path);
    out << render();
}

} // namespace sncl::svg
