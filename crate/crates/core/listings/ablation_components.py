def GenerateSample(history_populations, fitness_scores, best_individual, new_individuals_numbers, current_iteration, maximum_iteration, hyperparameters):

    def tournament_selection(populations, fitness_scores, tournament_size):
        selected_indices = []
        for _ in range(tournament_size):
            participants = choices(range(len(populations)), k=tournament_size)
            participants_fitness = [fitness_scores[i] for i in participants]
            winner_index = participants[np.argmin(participants_fitness)]
            selected_indices.append(winner_index)
        return [populations[i] for i in selected_indices]

    def uniform_crossover(parent1, parent2, crossover_rate):
        child = np.array([p1 if random() < crossover_rate else p2 for p1, p2 in zip(parent1, parent2)])
        return child

    def boundary_mutation(individual, mutation_rate, code_upperbound):
        for i in range(len(individual)):
            if random() < mutation_rate:
                individual[i] = 1 if random() < 0.5 else code_upperbound
        return individual

    # Retrieve hyperparameters with defaults
    tournament_size = hyperparameters.get('tournament_size', 3)
    crossover_rate = hyperparameters.get('crossover_rate', 0.7)  # Increased crossover rate for potentially better offspring
    mutation_rate = hyperparameters.get('mutation_rate', 0.05)  # Reduced mutation rate to maintain good traits
    code_upperbound = hyperparameters.get('code_upperbound', 100)
    elitism_count = hyperparameters.get('elitism_count', 1)  # Introducing elitism to ensure the best individual is carried forward

    current_population = history_populations[str(current_iteration - 1)]
    current_fitness = fitness_scores[str(current_iteration - 1)]

    # Sort the current population by fitness and apply elitism
    sorted_indices = np.argsort(current_fitness)
    elites = [current_population[i] for i in sorted_indices[:elitism_count]]

    # Generate new individuals, starting with the elites
    new_individuals = elites.copy()
    while len(new_individuals) < new_individuals_numbers:
        # Tournament selection
        parents = tournament_selection(current_population, current_fitness, tournament_size)
        # Uniform crossover
        child1 = uniform_crossover(parents[0], parents[1], crossover_rate)
        child2 = uniform_crossover(parents[1], parents[0], crossover_rate)
        # Boundary mutation
        child1 = boundary_mutation(child1, mutation_rate, code_upperbound)
        child2 = boundary_mutation(child2, mutation_rate, code_upperbound)
        # Add children to the new population
        new_individuals.extend([child1, child2])

    # Truncate in case we have extra individuals
    return new_individuals[:new_individuals_numbers]
