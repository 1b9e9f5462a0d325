#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "resseg/maps.hpp"

namespace resseg {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

using Ring = std::vector<Point>;

// Closed polygon rings in target-image pixel coordinates.
struct PolygonAnnotation {
    std::vector<Ring> polygons;
};

class InvalidAnnotation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void validate_ring(const Ring& ring, std::size_t index) {
    if (ring.size() < 3) {
        throw InvalidAnnotation("ring " + std::to_string(index) + " has " + std::to_string(ring.size()) +
                                " vertices, need at least 3");
    }
    for (const auto& p : ring) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
            throw InvalidAnnotation("ring " + std::to_string(index) + " has a non-finite coordinate");
        }
    }
}

// Exact-as-possible test that p lies on the closed segment [a, b].
inline bool on_segment(const Point& p, const Point& a, const Point& b) {
    const double cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    if (cross != 0.0) return false;
    return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
           p.y <= std::max(a.y, b.y);
}

// Whether edge (a, b) straddles the horizontal line at y (half-open in y).
inline bool straddles(const Point& a, const Point& b, double y) { return (a.y > y) != (b.y > y); }

// x coordinate where a straddling edge crosses the line at y.
inline double crossing_x(const Point& a, const Point& b, double y) {
    return a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y);
}

}  // namespace detail

// Even-odd inside test; points on the boundary count as inside.
inline bool point_in_polygon(Point p, const Ring& ring) {
    detail::validate_ring(ring, 0);
    const std::size_t n = ring.size();
    bool inside = false;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Point& a = ring[j];
        const Point& b = ring[i];
        if (detail::on_segment(p, a, b)) return true;
        if (detail::straddles(a, b, p.y) && p.x < detail::crossing_x(a, b, p.y)) inside = !inside;
    }
    return inside;
}

// Scanline fill sampling pixel centres; rings are unioned.
inline BinaryMask rasterize_polygons(const PolygonAnnotation& annotation, int width, int height) {
    if (width < 1 || height < 1) throw std::invalid_argument("rasterize_polygons: width and height must be >= 1");
    for (std::size_t r = 0; r < annotation.polygons.size(); ++r) detail::validate_ring(annotation.polygons[r], r);

    BinaryMask mask(width, height);
    std::vector<double> xs;
    for (const Ring& ring : annotation.polygons) {
        const std::size_t n = ring.size();
        double ymin = ring[0].y, ymax = ring[0].y;
        for (const auto& p : ring) {
            ymin = std::min(ymin, p.y);
            ymax = std::max(ymax, p.y);
        }
        const int row0 = std::max(0, static_cast<int>(std::floor(ymin - 0.5)));
        const int row1 = std::min(height - 1, static_cast<int>(std::ceil(ymax - 0.5)));
        for (int row = row0; row <= row1; ++row) {
            const double y = row + 0.5;
            xs.clear();
            for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
                if (detail::straddles(ring[j], ring[i], y)) xs.push_back(detail::crossing_x(ring[j], ring[i], y));
            }
            std::sort(xs.begin(), xs.end());
            // A centre is inside when an odd number of crossings lie strictly to its right.
            std::size_t k = 0;
            for (int col = 0; col < width; ++col) {
                const double x = col + 0.5;
                while (k < xs.size() && xs[k] <= x) ++k;
                if ((xs.size() - k) % 2 == 1) mask.at(row, col) = 1;
            }
            // Boundary pixels: centres lying exactly on an edge.
            for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
                const Point& a = ring[j];
                const Point& b = ring[i];
                if (y < std::min(a.y, b.y) || y > std::max(a.y, b.y)) continue;
                int c0, c1;
                if (a.y == b.y) {
                    c0 = static_cast<int>(std::floor(std::min(a.x, b.x) - 0.5));
                    c1 = static_cast<int>(std::ceil(std::max(a.x, b.x) - 0.5));
                } else {
                    const double xc = a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y);
                    c0 = static_cast<int>(std::floor(xc - 0.5)) - 1;
                    c1 = c0 + 3;
                }
                c0 = std::max(c0, 0);
                c1 = std::min(c1, width - 1);
                for (int col = c0; col <= c1; ++col) {
                    if (detail::on_segment(Point{col + 0.5, y}, a, b)) mask.at(row, col) = 1;
                }
            }
        }
    }
    return mask;
}

// Parses {"polygons": [[[x, y], ...], ...]}; extra keys are ignored.
inline PolygonAnnotation parse_annotation(const nlohmann::json& doc) {
    if (!doc.is_object() || !doc.contains("polygons") || !doc["polygons"].is_array()) {
        throw InvalidAnnotation("annotation must be an object with a \"polygons\" array");
    }
    PolygonAnnotation out;
    std::size_t index = 0;
    for (const auto& ring_json : doc["polygons"]) {
        if (!ring_json.is_array()) throw InvalidAnnotation("ring " + std::to_string(index) + " is not an array");
        Ring ring;
        for (const auto& v : ring_json) {
            if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
                throw InvalidAnnotation("ring " + std::to_string(index) + " has a vertex that is not an [x, y] pair");
            }
            ring.push_back({v[0].get<double>(), v[1].get<double>()});
        }
        detail::validate_ring(ring, index);
        out.polygons.push_back(std::move(ring));
        ++index;
    }
    return out;
}

inline PolygonAnnotation load_annotation(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open annotation file: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidAnnotation("annotation " + path + ": " + e.what());
    }
    return parse_annotation(doc);
}

inline nlohmann::json annotation_to_json(const PolygonAnnotation& a) {
    nlohmann::json rings = nlohmann::json::array();
    for (const auto& ring : a.polygons) {
        nlohmann::json r = nlohmann::json::array();
        for (const auto& p : ring) r.push_back({p.x, p.y});
        rings.push_back(std::move(r));
    }
    return {{"polygons", rings}};
}

}  // namespace resseg
