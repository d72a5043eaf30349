def GenerateSample(history_populations,fitness_scores,best_individual,new_individuals_numbers,current_iteration, maximum_iteration,hyperparameters):
    hyperparams = {
        'code_upperbound': hyperparameters.get('code_upperbound', 10),
        'mutation_rate': hyperparameters.get('mutation_rate', 0.1),
        'crossover_rate': hyperparameters.get('crossover_rate', 0.6),
        'selection_pressure': hyperparameters.get('selection_pressure', 1.5),
        'elitism': hyperparameters.get('elitism', True),
        'diversity_factor': hyperparameters.get('diversity_factor', 0.05),
        'variance_decay': hyperparameters.get('variance_decay', 0.98),
        'variance_min': hyperparameters.get('variance_min', 0.1),
        'tournament_size_factor': hyperparameters.get('tournament_size_factor', 0.2),
        'elite_diversity_boost': hyperparameters.get('elite_diversity_boost', 2.0),
        'random_individual_chance': hyperparameters.get('random_individual_chance', 0.05),
        'max_mutation': hyperparameters.get('max_mutation', 3)
    }

    # Calculate variance based on current iteration
    variance = max(hyperparams['variance_decay'] ** (current_iteration - 1), hyperparams['variance_min'])

    def mutate(individual):
        # Perform mutation on an individual with limited number of gene changes
        mutation_indices = random.sample(range(len(individual)), min(len(individual), hyperparams['max_mutation']))
        for i in mutation_indices:
            if random.random() < hyperparams['mutation_rate']:
                individual[i] = random.randint(1, hyperparams['code_upperbound'])
        return individual

    def crossover(parent1, parent2):
        # Perform uniform crossover between two parents
        child = np.array([parent1[i] if random.random() < 0.5 else parent2[i] for i in range(len(parent1))])
        return child

    def select_parent(population, scores):
        # Perform tournament selection
        tournament_size = int(len(population) * hyperparams['tournament_size_factor'])
        selected_indices = random.sample(range(len(population)), tournament_size)
        selected_scores = [scores[i] for i in selected_indices]
        winner_index = selected_indices[selected_scores.index(min(selected_scores))]
        return population[winner_index]

    def introduce_diversity(individual, diversity_boost=1.0):
        # Introduce diversity to an individual by adding Gaussian noise
        noise = np.random.randn(len(individual)) * variance * diversity_boost
        individual = np.round(individual + noise)
        individual = np.clip(individual, 1, hyperparams['code_upperbound']).astype(int)
        return individual

    def create_random_individual(length):
        return np.random.randint(1, hyperparams['code_upperbound'] + 1, length)

    # Convert history_population to a list of numpy arrays and fitness_scores to a list of scores
    population = [np.array(individual) for key in sorted(history_populations.keys()) for individual in history_populations[key]]
    scores = [score for key in sorted(fitness_scores.keys()) for score in fitness_scores[key]]

    # Generate new individuals
    new_individuals = []
    for _ in range(new_individuals_numbers):
        if random.random() < hyperparams['random_individual_chance']:
            new_individual = create_random_individual(len(best_individual))
        elif hyperparams['elitism'] and best_individual is not None and random.random() < hyperparams['diversity_factor']:
            # Add a mutated and diversified version of the best individual
            new_individual = mutate(introduce_diversity(best_individual.copy(), hyperparams['elite_diversity_boost']))
        elif len(population) > 0:
            # Create a new individual using crossover and mutation
            parent1 = select_parent(population, scores)
            parent2 = select_parent(population, scores)
            child = crossover(parent1, parent2)
            child = mutate(child)
            new_individual = introduce_diversity(child)
        else:
            # If there is no history population, create a random individual
            new_individual = create_random_individual(len(best_individual))
        new_individuals.append(new_individual)

    return new_individuals
