#pragma once

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "mp/tape.hpp"
#include "mp/tensor.hpp"

namespace mp {

constexpr int kNumNeuralKeypoints = 50;
constexpr int kNumFacialKeypoints = 106;
constexpr int kNumMixedKeypoints = 50;

enum class KeypointKind { neural, facial, mixed };

inline int keypoint_count(KeypointKind k) {
    switch (k) {
        case KeypointKind::neural: return kNumNeuralKeypoints;
        case KeypointKind::facial: return kNumFacialKeypoints;
        case KeypointKind::mixed: return kNumMixedKeypoints;
    }
    return 0;
}

// Ordered 2-D points in normalized [-1,1] coordinates. Out-of-range values
// are clamped at construction; non-finite values are rejected.
struct KeypointSet {
    std::vector<Point> points;
    KeypointKind kind;

    KeypointSet(std::vector<Point> pts, KeypointKind k) : points(std::move(pts)), kind(k) {
        const int expect = keypoint_count(k);
        if (static_cast<int>(points.size()) != expect)
            throw ContractError("keypoint set: expected " + std::to_string(expect) +
                                " points, got " + std::to_string(points.size()));
        for (auto& p : points) {
            if (!std::isfinite(p[0]) || !std::isfinite(p[1]))
                throw ContractError("keypoint set: non-finite coordinate");
            p[0] = clampf(p[0], -1.f, 1.f);
            p[1] = clampf(p[1], -1.f, 1.f);
        }
    }

    int count() const { return static_cast<int>(points.size()); }

    // [1,K,2] tensor view for tape work
    Tensor to_tensor() const {
        Tensor t({1, count(), 2});
        for (int i = 0; i < count(); ++i) {
            t.data[static_cast<size_t>(i * 2)] = points[static_cast<size_t>(i)][0];
            t.data[static_cast<size_t>(i * 2 + 1)] = points[static_cast<size_t>(i)][1];
        }
        return t;
    }

    static KeypointSet from_tensor(const Tensor& t, KeypointKind k) {
        require(t.rank() == 3 && t.dim(0) == 1 && t.dim(2) == 2,
                "keypoint set: tensor must be [1,K,2]");
        std::vector<Point> pts(static_cast<size_t>(t.dim(1)));
        for (int i = 0; i < t.dim(1); ++i)
            pts[static_cast<size_t>(i)] = {t.data[static_cast<size_t>(i * 2)],
                                           t.data[static_cast<size_t>(i * 2 + 1)]};
        return KeypointSet(std::move(pts), k);
    }
};

struct TrackFrame {
    int frame_index;
    KeypointSet facial;
    std::optional<KeypointSet> neural;
};

// File-based stand-in for external keypoint producers. One JSON object per
// line: {"frame":N,"fk":[[x,y]x106],"nk":[[x,y]x50]}, nk optional.
struct KeypointTrack {
    std::vector<TrackFrame> frames;

    size_t size() const { return frames.size(); }
};

namespace track_detail {

inline std::vector<Point> parse_points(const nlohmann::json& arr, size_t expect, int line_no,
                                       const char* field) {
    if (!arr.is_array() || arr.size() != expect)
        throw FormatError("keypoint track line " + std::to_string(line_no) + ": field '" +
                          field + "' must be an array of " + std::to_string(expect) + " pairs");
    std::vector<Point> pts;
    pts.reserve(expect);
    for (const auto& pr : arr) {
        if (!pr.is_array() || pr.size() != 2 || !pr[0].is_number() || !pr[1].is_number())
            throw FormatError("keypoint track line " + std::to_string(line_no) +
                              ": malformed coordinate pair in '" + field + "'");
        const float x = pr[0].get<float>();
        const float y = pr[1].get<float>();
        // beyond clamp tolerance means the file is corrupt, not just noisy
        if (!(x >= -1.5f && x <= 1.5f && y >= -1.5f && y <= 1.5f))
            throw FormatError("keypoint track line " + std::to_string(line_no) +
                              ": coordinate outside [-1.5,1.5] in '" + field + "'");
        pts.push_back({x, y});
    }
    return pts;
}

}  // namespace track_detail

inline KeypointTrack load_keypoint_track(std::istream& in) {
    KeypointTrack track;
    std::string line;
    int line_no = 0;
    int last_index = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError("keypoint track line " + std::to_string(line_no) +
                              ": JSON parse error: " + e.what());
        }
        if (!j.is_object() || !j.contains("frame") || !j["frame"].is_number_integer())
            throw FormatError("keypoint track line " + std::to_string(line_no) +
                              ": missing integer 'frame' field");
        const int idx = j["frame"].get<int>();
        if (idx <= last_index)
            throw FormatError("keypoint track line " + std::to_string(line_no) +
                              ": frame index " + std::to_string(idx) +
                              " is not strictly increasing");
        last_index = idx;
        if (!j.contains("fk"))
            throw FormatError("keypoint track line " + std::to_string(line_no) +
                              ": missing 'fk' field");
        KeypointSet fk(track_detail::parse_points(j["fk"], kNumFacialKeypoints, line_no, "fk"),
                       KeypointKind::facial);
        std::optional<KeypointSet> nk;
        if (j.contains("nk") && !j["nk"].is_null())
            nk = KeypointSet(
                track_detail::parse_points(j["nk"], kNumNeuralKeypoints, line_no, "nk"),
                KeypointKind::neural);
        track.frames.push_back(TrackFrame{idx, std::move(fk), std::move(nk)});
    }
    return track;
}

inline KeypointTrack load_keypoint_track(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open keypoint track: " + path);
    return load_keypoint_track(f);
}

// Canonical writer: 6 decimal places, keys in the order frame, fk, nk.
inline void save_keypoint_track(const KeypointTrack& track, std::ostream& out) {
    char buf[64];
    auto emit_points = [&](const std::vector<Point>& pts) {
        out << "[";
        for (size_t i = 0; i < pts.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "[%.6f,%.6f]", static_cast<double>(pts[i][0]),
                          static_cast<double>(pts[i][1]));
            out << (i ? "," : "") << buf;
        }
        out << "]";
    };
    for (const auto& fr : track.frames) {
        out << "{\"frame\":" << fr.frame_index << ",\"fk\":";
        emit_points(fr.facial.points);
        if (fr.neural) {
            out << ",\"nk\":";
            emit_points(fr.neural->points);
        }
        out << "}\n";
    }
}

inline void save_keypoint_track(const KeypointTrack& track, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot open for writing: " + path);
    save_keypoint_track(track, f);
}

// exp(-||g - p||^2 / (2 sigma^2)) per keypoint channel on the normalized grid
inline Tensor gaussian_heatmaps(const KeypointSet& kps, int out_h, int out_w, float sigma) {
    Tape tape;
    return tape.val(tape.gaussian_heatmaps(tape.put(kps.to_tensor()), out_h, out_w, sigma));
}

// Binary mask with a filled disk of radius_px pixels at every landmark.
// Landmark order does not matter.
inline Tensor rasterize_landmark_mask(const KeypointSet& fk, int out_h, int out_w,
                                      int radius_px) {
    require(fk.kind == KeypointKind::facial, "landmark mask: expected facial keypoints");
    require(radius_px >= 1, "landmark mask: radius must be >= 1");
    Tensor mask({1, 1, out_h, out_w});
    const float r2 = static_cast<float>(radius_px) * static_cast<float>(radius_px);
    for (const auto& p : fk.points) {
        // landmark position in pixel space, same convention as grid sampling
        const float px = (p[0] + 1.f) * 0.5f * (out_w - 1);
        const float py = (p[1] + 1.f) * 0.5f * (out_h - 1);
        const int x0 = std::max(0, static_cast<int>(std::floor(px - radius_px)));
        const int x1 = std::min(out_w - 1, static_cast<int>(std::ceil(px + radius_px)));
        const int y0 = std::max(0, static_cast<int>(std::floor(py - radius_px)));
        const int y1 = std::min(out_h - 1, static_cast<int>(std::ceil(py + radius_px)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const float dx = x - px, dy = y - py;
                if (dx * dx + dy * dy <= r2) mask.at(0, 0, y, x) = 1.f;
            }
    }
    return mask;
}

}  // namespace mp
