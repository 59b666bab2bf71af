#include <excb/synthdata.hpp>

#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <sstream>

namespace excb {

void export_points_csv(const MixtureSpec& spec, int64_t batch_size, int64_t first_step,
                       int64_t step_count, std::ostream& os) {
  spec.validate();
  if (batch_size < 1 || step_count < 1)
    throw std::invalid_argument("export_points_csv: empty export");
  os << "# dim=" << spec.input_dim << " batch=" << batch_size << " first_step=" << first_step
     << " steps=" << step_count << "\n";
  char buf[40];
  for (int64_t s = 0; s < step_count; ++s) {
    auto [pts, labels] = sample_points<double>(spec, batch_size, first_step + s);
    for (int64_t i = 0; i < batch_size; ++i) {
      for (int64_t t = 0; t < spec.input_dim; ++t) {
        std::snprintf(buf, sizeof buf, "%.17g", pts.at(i, t));
        os << buf << ',';
      }
      os << labels[static_cast<size_t>(i)] << "\n";
    }
  }
}

PointSet load_points_csv(std::istream& is) {
  PointSet out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    size_t pos = 0;
    while (true) {
      const size_t comma = line.find(',', pos);
      const std::string tok = line.substr(pos, comma == std::string::npos ? comma : comma - pos);
      if (comma == std::string::npos) {
        out.labels.push_back(static_cast<int32_t>(std::stol(tok)));
        break;
      }
      row.push_back(std::stod(tok));
      pos = comma + 1;
    }
    if (out.dim == 0) out.dim = static_cast<int64_t>(row.size());
    if (static_cast<int64_t>(row.size()) != out.dim)
      throw std::runtime_error("load_points_csv: ragged row");
    out.points.insert(out.points.end(), row.begin(), row.end());
  }
  if (out.dim == 0) throw std::runtime_error("load_points_csv: no data rows");
  return out;
}

}  // namespace excb
