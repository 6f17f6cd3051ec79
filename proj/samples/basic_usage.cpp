#include <fstream>
#include <iostream>

#include "dse/em.hpp"
#include "dse/fast_fixpoint.hpp"
#include "dse/io.hpp"

int main(int argc, char** argv) {
  std::ifstream in(argc > 1 ? argv[1] : DSE_SAMPLES_DIR "/nz_data.csv");
  const dse::ObservedData data = dse::read_observed_data(in);
  const dse::CDMap cd = dse::build_standard_cd(data);

  for (const auto& c : dse::validate_positive(cd, data).checks)
    std::cout << c.id << (c.passed ? " ok  " : " no  ") << c.detail << '\n';

  const auto em = dse::run_em(data, cd);
  const auto fast = dse::run_fast(data, cd);
  std::cout << "em iterations: " << em.trace.iteration_count() << "\nfast iterations: " << fast.iterations()
            << "\nmax relative difference: "
            << dse::max_relative_difference(em.table.values(), fast.table.values()) << '\n';
  dse::write_full_table(std::cout, fast.table);
}
