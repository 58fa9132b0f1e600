#include <iostream>
#include "robustssm/model.hpp"
int main() {
  rssm::ModelConfig cfg;
  std::cout << rssm::init_model(cfg, 1).total_elements() << "\n";
}
