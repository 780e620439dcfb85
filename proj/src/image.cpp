#include "uavkit/image.hpp"

#include <fstream>
#include <sstream>

namespace uavkit::image {

namespace {

void check(const Image& img) {
  if (img.width <= 0 || img.height <= 0 || (img.channels != 3 && img.channels != 4)) {
    throw ValidationError("image must have positive dimensions and 3 or 4 channels");
  }
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * img.channels) {
    throw ValidationError("image pixel buffer size does not match dimensions");
  }
}

// Skips whitespace and '#' comments between PPM header tokens.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (!std::isspace(c)) {
      tok.push_back(static_cast<char>(c));
      while ((c = in.get()) != EOF && !std::isspace(c)) tok.push_back(static_cast<char>(c));
      break;
    }
  }
  return tok;
}

}  // namespace

void write_image(const std::string& path, const Image& img) {
  check(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  if (img.channels == 3) {
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
  } else {
    out << "P7\nWIDTH " << img.width << "\nHEIGHT " << img.height
        << "\nDEPTH 4\nMAXVAL 255\nTUPLTYPE RGB_ALPHA\nENDHDR\n";
  }
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("short write: " + path);
}

Image read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  const std::string magic = next_token(in);
  Image img;
  if (magic == "P6") {
    img.channels = 3;
    img.width = std::stoi(next_token(in));
    img.height = std::stoi(next_token(in));
    const int maxval = std::stoi(next_token(in));
    if (maxval != 255) throw IoError("unsupported PPM maxval in " + path);
  } else if (magic == "P7") {
    img.channels = 0;
    std::string key;
    while ((key = next_token(in)) != "ENDHDR") {
      if (key.empty()) throw IoError("truncated PAM header in " + path);
      if (key == "WIDTH") img.width = std::stoi(next_token(in));
      else if (key == "HEIGHT") img.height = std::stoi(next_token(in));
      else if (key == "DEPTH") img.channels = std::stoi(next_token(in));
      else if (key == "MAXVAL" || key == "TUPLTYPE") next_token(in);
    }
    if (img.channels != 4) throw IoError("expected 4-channel PAM in " + path);
  } else {
    throw IoError("unsupported image format (want P6/P7): " + path);
  }
  if (img.width <= 0 || img.height <= 0) throw IoError("bad image dimensions in " + path);
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw IoError("truncated pixel data in " + path);
  }
  return img;
}

Image resize_nearest(const Image& src, int w, int h) {
  check(src);
  if (w == src.width && h == src.height) return src;
  Image dst;
  dst.width = w;
  dst.height = h;
  dst.channels = src.channels;
  dst.pixels.resize(static_cast<std::size_t>(w) * h * src.channels);
  for (int y = 0; y < h; ++y) {
    const int sy = static_cast<int>((static_cast<std::int64_t>(y) * src.height) / h);
    for (int x = 0; x < w; ++x) {
      const int sx = static_cast<int>((static_cast<std::int64_t>(x) * src.width) / w);
      const std::uint8_t* s = src.at(sx, sy);
      std::uint8_t* d = dst.at(x, y);
      for (int c = 0; c < src.channels; ++c) d[c] = s[c];
    }
  }
  return dst;
}

}  // namespace uavkit::image
