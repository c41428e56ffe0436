#pragma once

// Synthetic bait data: fake card records and the large database dump.

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace decoyweaver {

// Issuer prefix for every fabricated card. Major industry identifier 0 is
// never assigned to a card issuer, so no generated number can be live.
inline constexpr std::string_view kTestIinPrefix = "000000";

struct FabricatedRecord {
  std::string name;
  std::string card_number;  // 16 digits, Luhn-valid
  std::string cvv;          // 3 digits

  bool operator==(const FabricatedRecord&) const = default;
};

bool luhn_valid(std::string_view digits);
// Check digit that makes `partial` + digit Luhn-valid.
char luhn_check_digit(std::string_view partial);

std::vector<FabricatedRecord> generate_fabricated_records(std::size_t n, std::uint64_t seed);

// "name,card_number,cvv" with a header row.
std::string render_records_csv(const std::vector<FabricatedRecord>& records);

struct DatabaseFileSpec {
  std::uint64_t size_bytes = 16ULL << 20;
  std::uint64_t seed = 1;
  std::string planted_url = "http://wp.shadowbrook.local/wp-login.php";
  std::string defacement_url = "http://wp.shadowbrook.local/defaced.html";
  std::size_t url_count = 64;
  std::size_t defacement_count = 1;
  // Extra lines planted the same way (e.g. links to a second site).
  std::vector<std::string> extra_references;
};

inline constexpr std::uint64_t kMinDatabaseSize = 1024;

// Number of planted-URL copies actually embedded for this spec; reduced only
// when the file is too small to hold url_count copies, never below one.
std::size_t effective_url_count(const DatabaseFileSpec& spec);

// Streams exactly size_bytes bytes to `sink` in chunks. Deterministic for a
// given DatabaseFileSpec; the planted URL appears exactly effective_url_count() times.
void generate_database_file(const DatabaseFileSpec& spec,
                            const std::function<void(std::string_view chunk)>& sink);
void generate_database_file(const DatabaseFileSpec& spec, std::ostream& out);
std::string generate_database_bytes(const DatabaseFileSpec& spec);

}  // namespace decoyweaver
