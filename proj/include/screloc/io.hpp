#pragma once

#include "screloc/config.hpp"
#include "screloc/encoder.hpp"
#include "screloc/geometry.hpp"

#include <string>
#include <vector>

namespace screloc {

/// Binary scan container: "MLSC", u16 version, u32 point count, then
/// count x 3 float32 little-endian coordinates. Exactly 10 + 12N bytes.
void save_scan(const std::string& path, const PointCloud& cloud);
PointCloud load_scan(const std::string& path);

struct PoseRecord {
    std::string scan_id;
    Pose pose;  // sensor -> world
};

/// CSV `scan_id,tx,ty,tz,qw,qx,qy,qz`, scalar-first unit quaternions.
void save_poses_csv(const std::string& path, const std::vector<PoseRecord>& poses);
std::vector<PoseRecord> load_poses_csv(const std::string& path);

/// CSV `lx,ly,lz,wx,wy,wz`, one correspondence per line.
void save_correspondences_csv(const std::string& path, const CorrespondenceSet& matches);
CorrespondenceSet load_correspondences_csv(const std::string& path);

/// Weights plus the key=value block describing the model that owns them.
/// Tensors are stored as float32 row-major.
struct Checkpoint {
    KeyValues config;
    NamedTensors tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace screloc
