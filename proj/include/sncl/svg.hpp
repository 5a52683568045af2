#pragma once

#include <string>
#include <vector>

namespace sncl::svg {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

struct LineChart {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<Series> series;
    int width = 720;
    int height = 420;
    // Fixed y range when min < max; otherwise derived from the data.
    double y_min = 0.0;
    double y_max = 0.0;

    std::string render() const;
    void write(const std::string& path) const;
};

} // namespace sncl::svg
