// Regenerates fixtures/*.json. Run from the repository root.
#include "cmdp/harness.hpp"
#include "cmdp/inventory.hpp"
#include "cmdp/serialization.hpp"

int main() {
  using namespace cmdp;
  write_json_file("fixtures/inventory_paper_wc.json", to_json(inventory::as_weakly_coupled(inventory::paper_config())));
  write_json_file("fixtures/inventory_reduced_wc.json", to_json(inventory::as_weakly_coupled(inventory::reduced_config())));
  write_json_file("fixtures/small_cmdp.json", to_json(harness::random_cmdp(harness::RandomCmdpSpec{}, 11)));
  return 0;
}
