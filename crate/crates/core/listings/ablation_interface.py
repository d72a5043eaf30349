def GenerateSample(history_populations, fitness_scores, best_individual, new_individuals_numbers, current_iteration, maximum_iteration, hyperparameters):

    # Hyperparameters with default values
    hyper = {
        'code_upperbound': hyperparameters.get('code_upperbound', 30),
        'mutation_rate': hyperparameters.get('mutation_rate', 0.1),
        'tournament_size': hyperparameters.get('tournament_size', 5),
        'elitism_rate': hyperparameters.get('elitism_rate', 0.1),
        'crossover_rate': hyperparameters.get('crossover_rate', 0.9),
        'diversity_factor': hyperparameters.get('diversity_factor', 0.1),
        'best_individual_influence': hyperparameters.get('best_individual_influence', 0.05)
    }

    def tournament_selection(populations, fitness_scores, tournament_size):
        tournament_contestants = choices(list(zip(populations, fitness_scores)), k=tournament_size)
        tournament_contestants.sort(key=lambda x: x[1])  # sort by fitness score, lower is better
        winner = tournament_contestants[0][0]  # return the individual with the best fitness
        return winner

    def mutate(individual, mutation_rate, code_upperbound):
        mutation_indices = [i for i in range(len(individual)) if random() < mutation_rate]
        for i in mutation_indices:
            individual[i] = randint(1, code_upperbound)
        return individual

    def crossover(parent1, parent2, crossover_rate, best_individual, best_influence):
        child = parent1.copy()
        if random() < crossover_rate:
            for i in range(len(parent1)):
                if random() < best_influence:
                    child[i] = best_individual[i]
                elif random() < 0.5:
                    child[i] = parent1[i]
                else:
                    child[i] = parent2[i]
        return child

    def introduce_diversity(population, diversity_factor, code_upperbound):
        for individual in population:
            if random() < diversity_factor:
                mutation_index = randint(0, len(individual) - 1)
                individual[mutation_index] = randint(1, code_upperbound)
        return population

    # Retrieve the latest population and their fitness scores
    elite_population = history_populations[str(current_iteration - 1)]
    elite_fitness = fitness_scores[str(current_iteration - 1)]

    # Calculate the number of elites based on the elitism rate
    number_of_elites = int(hyper['elitism_rate'] * new_individuals_numbers)

    # Sort the elite_population based on fitness and select the top individuals
    sorted_indices = np.argsort(elite_fitness)
    elites = [elite_population[i] for i in sorted_indices[:number_of_elites]]

    # Generate new individuals with crossover and mutation
    new_individuals = []
    while len(new_individuals) < new_individuals_numbers - number_of_elites:
        parent1 = tournament_selection(elite_population, elite_fitness, hyper['tournament_size'])
        parent2 = tournament_selection(elite_population, elite_fitness, hyper['tournament_size'])
        child = crossover(parent1, parent2, hyper['crossover_rate'], best_individual, hyper['best_individual_influence'])
        new_individuals.append(mutate(child, hyper['mutation_rate'], hyper['code_upperbound']))

    # Introduce diversity
    new_individuals = introduce_diversity(new_individuals, hyper['diversity_factor'], hyper['code_upperbound'])

    # Include elites in the new population pool
    new_individuals.extend(elites)

    # Ensure all values are within the specified range
    new_individuals = [np.clip(individual, 1, hyper['code_upperbound']) for individual in new_individuals]

    return new_individuals
