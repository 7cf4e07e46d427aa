#include "screloc/io.hpp"

#include <Eigen/Geometry>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little, "scan/checkpoint containers assume little-endian");

namespace screloc {
namespace {

constexpr char kScanMagic[4] = {'M', 'L', 'S', 'C'};
constexpr char kCheckpointMagic[4] = {'M', 'L', 'C', 'K'};
constexpr std::uint16_t kScanVersion = 1;
constexpr std::uint16_t kCheckpointVersion = 1;

template <typename T>
void write_raw(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_raw(std::istream& in, const std::string& what) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::invalid_argument("truncated " + what);
    return v;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode) {
    std::ofstream out(path, mode);
    if (!out) throw std::invalid_argument("cannot write " + path);
    return out;
}

std::ifstream open_in(const std::string& path, std::ios::openmode mode) {
    std::ifstream in(path, mode);
    if (!in) throw std::invalid_argument("cannot open " + path);
    return in;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (const char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

double csv_double(const std::string& field, const std::string& path, std::size_t lineno) {
    try {
        std::size_t used = 0;
        const double d = std::stod(field, &used);
        if (used != field.size()) throw std::invalid_argument(field);
        return d;
    } catch (const std::exception&) {
        throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": bad number '" + field + "'");
    }
}

}  // namespace

void save_scan(const std::string& path, const PointCloud& cloud) {
    if (cloud.size() > 0xffffffffull) throw std::invalid_argument("save_scan: too many points");
    std::ofstream out = open_out(path, std::ios::binary);
    out.write(kScanMagic, 4);
    write_raw(out, kScanVersion);
    write_raw(out, static_cast<std::uint32_t>(cloud.size()));
    for (const Vec3& p : cloud.points) {
        for (int a = 0; a < 3; ++a) {
            const float f = static_cast<float>(p[a]);
            write_raw(out, f);
        }
    }
    if (!out) throw std::invalid_argument("save_scan: write failed for " + path);
}

PointCloud load_scan(const std::string& path) {
    std::ifstream in = open_in(path, std::ios::binary);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kScanMagic, 4) != 0)
        throw std::invalid_argument(path + ": not a scan container");
    if (read_raw<std::uint16_t>(in, "scan header") != kScanVersion)
        throw std::invalid_argument(path + ": unsupported scan version");
    const auto count = read_raw<std::uint32_t>(in, "scan header");
    PointCloud cloud;
    cloud.points.resize(count);
    for (std::uint32_t i = 0; i < count; ++i)
        for (int a = 0; a < 3; ++a) cloud.points[i][a] = read_raw<float>(in, "scan payload");
    in.peek();
    if (!in.eof()) throw std::invalid_argument(path + ": trailing bytes after scan payload");
    return cloud;
}

void save_poses_csv(const std::string& path, const std::vector<PoseRecord>& poses) {
    std::ofstream out = open_out(path, std::ios::out);
    out << "scan_id,tx,ty,tz,qw,qx,qy,qz\n";
    for (const PoseRecord& r : poses) {
        validate_pose(r.pose);
        const Eigen::Quaterniond q(r.pose.rotation);
        out << r.scan_id;
        for (int a = 0; a < 3; ++a) out << ',' << format_double(r.pose.translation[a]);
        out << ',' << format_double(q.w()) << ',' << format_double(q.x()) << ',' << format_double(q.y()) << ','
            << format_double(q.z()) << '\n';
    }
    if (!out) throw std::invalid_argument("save_poses_csv: write failed for " + path);
}

std::vector<PoseRecord> load_poses_csv(const std::string& path) {
    std::ifstream in = open_in(path, std::ios::in);
    std::vector<PoseRecord> poses;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        if (line.rfind("scan_id", 0) == 0) continue;  // header
        const std::vector<std::string> f = split_csv_line(line);
        if (f.size() != 8)
            throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": expected 8 fields, got " +
                                        std::to_string(f.size()));
        PoseRecord rec;
        rec.scan_id = f[0];
        for (int a = 0; a < 3; ++a) rec.pose.translation[a] = csv_double(f[1 + a], path, lineno);
        Eigen::Quaterniond q(csv_double(f[4], path, lineno), csv_double(f[5], path, lineno),
                             csv_double(f[6], path, lineno), csv_double(f[7], path, lineno));
        if (std::abs(q.norm() - 1.0) > 1e-6)
            throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": quaternion is not unit length");
        q.normalize();
        rec.pose.rotation = q.toRotationMatrix();
        poses.push_back(std::move(rec));
    }
    return poses;
}

void save_correspondences_csv(const std::string& path, const CorrespondenceSet& matches) {
    std::ofstream out = open_out(path, std::ios::out);
    out << "lx,ly,lz,wx,wy,wz\n";
    for (const Correspondence& c : matches) {
        out << format_double(c.local.x()) << ',' << format_double(c.local.y()) << ',' << format_double(c.local.z())
            << ',' << format_double(c.world.x()) << ',' << format_double(c.world.y()) << ','
            << format_double(c.world.z()) << '\n';
    }
    if (!out) throw std::invalid_argument("save_correspondences_csv: write failed for " + path);
}

CorrespondenceSet load_correspondences_csv(const std::string& path) {
    std::ifstream in = open_in(path, std::ios::in);
    CorrespondenceSet matches;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        if (line.rfind("lx", 0) == 0) continue;  // header
        const std::vector<std::string> f = split_csv_line(line);
        if (f.size() != 6)
            throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": expected 6 fields, got " +
                                        std::to_string(f.size()));
        Correspondence c;
        for (int a = 0; a < 3; ++a) c.local[a] = csv_double(f[a], path, lineno);
        for (int a = 0; a < 3; ++a) c.world[a] = csv_double(f[3 + a], path, lineno);
        matches.push_back(c);
    }
    return matches;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream out = open_out(path, std::ios::binary);
    out.write(kCheckpointMagic, 4);
    write_raw(out, kCheckpointVersion);
    const std::string cfg = serialize_key_values(ck.config);
    write_raw(out, static_cast<std::uint32_t>(cfg.size()));
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    write_raw(out, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, mat] : ck.tensors) {
        if (name.size() > 0xffff) throw std::invalid_argument("save_checkpoint: tensor name too long");
        write_raw(out, static_cast<std::uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_raw(out, static_cast<std::uint32_t>(mat.rows()));
        write_raw(out, static_cast<std::uint32_t>(mat.cols()));
        for (Eigen::Index r = 0; r < mat.rows(); ++r)
            for (Eigen::Index c = 0; c < mat.cols(); ++c) write_raw(out, static_cast<float>(mat(r, c)));
    }
    if (!out) throw std::invalid_argument("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in = open_in(path, std::ios::binary);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw std::invalid_argument(path + ": not a checkpoint container");
    if (read_raw<std::uint16_t>(in, "checkpoint header") != kCheckpointVersion)
        throw std::invalid_argument(path + ": unsupported checkpoint version");
    Checkpoint ck;
    const auto cfg_len = read_raw<std::uint32_t>(in, "checkpoint header");
    std::string cfg(cfg_len, '\0');
    if (!in.read(cfg.data(), cfg_len)) throw std::invalid_argument(path + ": truncated config block");
    ck.config = parse_key_values(cfg);
    const auto n_tensors = read_raw<std::uint32_t>(in, "checkpoint header");
    for (std::uint32_t t = 0; t < n_tensors; ++t) {
        const auto name_len = read_raw<std::uint16_t>(in, "tensor header");
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw std::invalid_argument(path + ": truncated tensor name");
        const auto rows = read_raw<std::uint32_t>(in, "tensor header");
        const auto cols = read_raw<std::uint32_t>(in, "tensor header");
        ad::Mat mat(rows, cols);
        for (std::uint32_t r = 0; r < rows; ++r)
            for (std::uint32_t c = 0; c < cols; ++c) mat(r, c) = read_raw<float>(in, "tensor payload");
        ck.tensors.emplace_back(std::move(name), std::move(mat));
    }
    in.peek();
    if (!in.eof()) throw std::invalid_argument(path + ": trailing bytes after tensors");
    return ck;
}

}  // namespace screloc
