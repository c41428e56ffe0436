#include "decoyweaver/fabricate.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <sstream>

#include "decoyweaver/rng.hpp"

namespace decoyweaver {

namespace {

constexpr std::array<std::string_view, 24> kFirstNames = {
    "Alice", "Bruno",  "Chloe", "Dmitri", "Elena", "Farid", "Grace", "Hiro",   "Ines",  "Jonas", "Keiko", "Liam",
    "Maya",  "Nikhil", "Olga",  "Pedro",  "Quinn", "Rosa",  "Sami",  "Tomasz", "Uma",   "Viktor", "Wen",  "Yusuf"};
constexpr std::array<std::string_view, 24> kLastNames = {
    "Abbott", "Brandt", "Castillo", "Dubois", "Eriksen", "Fischer", "Garcia",  "Horvat",
    "Ivanova", "Jansen", "Kowalski", "Laurent", "Moreau", "Nakamura", "Okafor", "Petrov",
    "Quiroga", "Rossi",  "Schmidt",  "Tanaka", "Ueda",    "Vasquez", "Weber",   "Zielinski"};

std::string random_digits(Rng& rng, std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s.push_back(static_cast<char>('0' + rng.below(10)));
  return s;
}

FabricatedRecord make_record(Rng& rng) {
  FabricatedRecord r;
  r.name = std::string(kFirstNames[rng.below(kFirstNames.size())]) + " " +
           std::string(kLastNames[rng.below(kLastNames.size())]);
  std::string partial = std::string(kTestIinPrefix) + random_digits(rng, 15 - kTestIinPrefix.size());
  r.card_number = partial + luhn_check_digit(partial);
  r.cvv = random_digits(rng, 3);
  return r;
}

struct Plant {
  std::uint64_t offset;
  std::string bytes;
};

std::vector<std::string> plant_strings(const DatabaseFileSpec& spec, std::size_t url_count) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < url_count; ++i) out.push_back(spec.planted_url);
  for (std::size_t i = 0; i < spec.defacement_count; ++i) out.push_back(spec.defacement_url);
  for (const auto& e : spec.extra_references) out.push_back(e);
  return out;
}

std::size_t max_plant_len(const DatabaseFileSpec& spec) {
  std::size_t len = std::max(spec.planted_url.size(), spec.defacement_url.size());
  for (const auto& e : spec.extra_references) len = std::max(len, e.size());
  return len + 2;  // framed by newlines
}

std::vector<Plant> layout_plants(const DatabaseFileSpec& spec) {
  auto strings = plant_strings(spec, effective_url_count(spec));
  Rng rng(derive_seed(spec.seed, hash_label("plants")));
  for (std::size_t i = strings.size(); i > 1; --i) std::swap(strings[i - 1], strings[rng.below(i)]);
  std::uint64_t seg = spec.size_bytes / strings.size();
  std::vector<Plant> plants;
  for (std::size_t k = 0; k < strings.size(); ++k) {
    std::string framed = "\n" + strings[k] + "\n";
    std::uint64_t slack = seg - framed.size();
    plants.push_back(Plant{k * seg + rng.below(slack + 1), std::move(framed)});
  }
  return plants;
}

// Plausible SQL dump text. Contains no URLs, so planted strings stay unique.
class FillerSource {
 public:
  explicit FillerSource(std::uint64_t seed) : rng_(derive_seed(seed, hash_label("filler"))) {
    pending_ =
        "-- MySQL dump 10.13  Distrib 5.7.26, for Linux (x86_64)\n"
        "-- Host: localhost    Database: shop_prod\n"
        "-- ------------------------------------------------------\n"
        "SET NAMES utf8mb4;\n"
        "LOCK TABLES `customers` WRITE;\n";
  }

  void append_to(std::string& buf) {
    buf += pending_;
    pending_.clear();
    char line[192];
    ++row_;
    switch (rng_.below(5)) {
      case 0:
      case 1: {
        auto rec = make_record(rng_);
        std::snprintf(line, sizeof line, "INSERT INTO `customers` VALUES (%llu,'%s','%s','%s');\n",
                      static_cast<unsigned long long>(row_), rec.name.c_str(), rec.card_number.c_str(),
                      rec.cvv.c_str());
        break;
      }
      case 2:
      case 3:
        std::snprintf(line, sizeof line, "INSERT INTO `orders` VALUES (%llu,%llu,%llu.%02llu,'2019-%02llu-%02llu');\n",
                      static_cast<unsigned long long>(row_), static_cast<unsigned long long>(rng_.below(90000) + 1),
                      static_cast<unsigned long long>(rng_.below(900) + 5),
                      static_cast<unsigned long long>(rng_.below(100)),
                      static_cast<unsigned long long>(rng_.below(12) + 1),
                      static_cast<unsigned long long>(rng_.below(28) + 1));
        break;
      default:
        std::snprintf(line, sizeof line, "INSERT INTO `sessions` VALUES ('%016llx',%llu,'%s');\n",
                      static_cast<unsigned long long>(rng_.next()),
                      static_cast<unsigned long long>(rng_.below(90000) + 1),
                      std::string(kLastNames[rng_.below(kLastNames.size())]).c_str());
        break;
    }
    buf += line;
  }

 private:
  Rng rng_;
  std::uint64_t row_ = 0;
  std::string pending_;
};

}  // namespace

bool luhn_valid(std::string_view digits) {
  if (digits.empty()) return false;
  int sum = 0;
  bool dbl = false;
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
    if (*it < '0' || *it > '9') return false;
    int d = *it - '0';
    if (dbl) {
      d *= 2;
      if (d > 9) d -= 9;
    }
    sum += d;
    dbl = !dbl;
  }
  return sum % 10 == 0;
}

char luhn_check_digit(std::string_view partial) {
  int sum = 0;
  bool dbl = true;  // the check digit itself will occupy the undoubled slot
  for (auto it = partial.rbegin(); it != partial.rend(); ++it) {
    int d = *it - '0';
    if (dbl) {
      d *= 2;
      if (d > 9) d -= 9;
    }
    sum += d;
    dbl = !dbl;
  }
  return static_cast<char>('0' + (10 - sum % 10) % 10);
}

std::vector<FabricatedRecord> generate_fabricated_records(std::size_t n, std::uint64_t seed) {
  Rng rng(derive_seed(seed, hash_label("records")));
  std::vector<FabricatedRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_record(rng));
  return out;
}

std::string render_records_csv(const std::vector<FabricatedRecord>& records) {
  std::string out = "name,card_number,cvv\n";
  for (const auto& r : records) out += r.name + "," + r.card_number + "," + r.cvv + "\n";
  return out;
}

std::size_t effective_url_count(const DatabaseFileSpec& spec) {
  std::uint64_t size = std::max(spec.size_bytes, kMinDatabaseSize);
  std::size_t others = spec.defacement_count + spec.extra_references.size();
  std::size_t capacity = static_cast<std::size_t>(size / (max_plant_len(spec) + 1));
  std::size_t urls = capacity > others ? std::min(spec.url_count, capacity - others) : 0;
  return std::max<std::size_t>(urls, 1);
}

void generate_database_file(const DatabaseFileSpec& in_spec, const std::function<void(std::string_view)>& sink) {
  DatabaseFileSpec spec = in_spec;
  spec.size_bytes = std::max(spec.size_bytes, kMinDatabaseSize);
  auto plants = layout_plants(spec);
  std::sort(plants.begin(), plants.end(), [](const Plant& a, const Plant& b) { return a.offset < b.offset; });

  constexpr std::size_t kChunk = 1 << 20;
  FillerSource filler(spec.seed);
  std::string buf;
  std::string carry;
  std::uint64_t written = 0;
  std::size_t next_plant = 0;
  while (written < spec.size_bytes) {
    buf.swap(carry);
    carry.clear();
    std::size_t want = static_cast<std::size_t>(std::min<std::uint64_t>(kChunk, spec.size_bytes - written));
    while (buf.size() < want) filler.append_to(buf);
    if (buf.size() > want) {
      carry.assign(buf, want, std::string::npos);
      buf.resize(want);
    }
    std::uint64_t chunk_end = written + want;
    for (std::size_t i = next_plant; i < plants.size() && plants[i].offset < chunk_end; ++i) {
      const auto& p = plants[i];
      std::uint64_t p_end = p.offset + p.bytes.size();
      std::uint64_t from = std::max(p.offset, written);
      std::uint64_t to = std::min(p_end, chunk_end);
      if (from < to)
        buf.replace(static_cast<std::size_t>(from - written), static_cast<std::size_t>(to - from), p.bytes,
                    static_cast<std::size_t>(from - p.offset), static_cast<std::size_t>(to - from));
      if (p_end <= chunk_end && i == next_plant) ++next_plant;
    }
    sink(buf);
    written = chunk_end;
  }
}

void generate_database_file(const DatabaseFileSpec& spec, std::ostream& out) {
  generate_database_file(spec, [&](std::string_view chunk) { out.write(chunk.data(), static_cast<std::streamsize>(chunk.size())); });
}

std::string generate_database_bytes(const DatabaseFileSpec& spec) {
  std::string out;
  out.reserve(static_cast<std::size_t>(std::max(spec.size_bytes, kMinDatabaseSize)));
  generate_database_file(spec, [&](std::string_view chunk) { out.append(chunk); });
  return out;
}

}  // namespace decoyweaver
