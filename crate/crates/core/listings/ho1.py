def GenerateSample(history_populations,fitness_scores,best_individual,new_individuals_numbers,current_iteration, maximum_iteration,hyperparameters):
    # Define default hyperparameters using .get()
    hyperparams = {
        'code_upperbound': hyperparameters.get('code_upperbound', 10),
        'mutation_rate': hyperparameters.get('mutation_rate', 0.15),
        'crossover_rate': hyperparameters.get('crossover_rate', 0.7),
        'selection_pressure': hyperparameters.get('selection_pressure', 1.8),
        'elitism_count': hyperparameters.get('elitism_count', 1),
        'mutation_scaling_factor': hyperparameters.get('mutation_scaling_factor', 0.9),
        'max_mutation': hyperparameters.get('max_mutation', 2),
        'tournament_size_factor': hyperparameters.get('tournament_size_factor', 0.15)
    }

    # Nested functions under GenerateSample
    def mutate(individual, scaling_factor):
        mutation_count = max(1, int(len(individual) * scaling_factor * hyperparams['mutation_rate']))
        mutation_indices = random.sample(range(len(individual)), mutation_count)
        for i in mutation_indices:
            individual[i] = random.randint(1, hyperparams['code_upperbound'])
        return individual

    def crossover(parent1, parent2):
        crossover_indices = random.sample(range(len(parent1)), int(len(parent1) * hyperparams['crossover_rate']))
        child = np.array([parent2[i] if i in crossover_indices else parent1[i] for i in range(len(parent1))])
        return child

    def tournament_selection(population, scores):
        tournament_size = max(int(len(population) * hyperparams['tournament_size_factor']), 2)
        selected_indices = random.sample(range(len(population)), tournament_size)
        selected_scores = [(i, scores[i]) for i in selected_indices]
        selected_scores.sort(key=lambda x: x[1])
        return population[selected_scores[0][0]]

    def create_new_individual(population, scores):
        parent1 = tournament_selection(population, scores)
        parent2 = tournament_selection(population, scores)
        child = crossover(parent1, parent2)
        mutation_scaling_factor = hyperparams['mutation_scaling_factor'] ** (1 + (maximum_iteration - current_iteration) / maximum_iteration)
        child = mutate(child, mutation_scaling_factor)
        return child

    def elitism(population, scores):
        sorted_population = sorted(zip(population, scores), key=lambda x: x[1])
        return [ind for ind, _ in sorted_population[:hyperparams['elitism_count']]]

    # Main logic for GenerateSample
    population = [np.array(individual) for key in sorted(history_populations.keys()) for individual in history_populations[key]]
    scores = [score for key in sorted(fitness_scores.keys()) for score in fitness_scores[key]]

    new_individuals = []
    elite_individuals = elitism(population, scores) if len(population) > 0 else []

    for elite in elite_individuals:
        new_individuals.append(elite)

    remaining_individuals_count = new_individuals_numbers - len(new_individuals)
    for _ in range(remaining_individuals_count):
        if len(population) > 0:
            new_individual = create_new_individual(population, scores)
        else:
            new_individual = np.random.randint(1, hyperparams['code_upperbound'] + 1, len(best_individual))
        new_individuals.append(new_individual)

    return new_individuals
