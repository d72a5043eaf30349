def GenerateSample(history_populations,fitness_scores,best_individual,new_individuals_numbers,current_iteration, maximum_iteration,hyperparameters):
    # Define default hyperparameters
    hyperparams = {
        'code_upperbound': hyperparameters.get('code_upperbound', 10),
        'mutation_rate': hyperparameters.get('mutation_rate', 0.2),
        'crossover_rate': hyperparameters.get('crossover_rate', 0.5),
        'selection_pressure': hyperparameters.get('selection_pressure', 2.0),
        'elitism': hyperparameters.get('elitism', True),
    }

    def mutate(individual):
        # Perform mutation on an individual
        for i in range(len(individual)):
            if random.random() < hyperparams['mutation_rate']:
                individual[i] = random.randint(1, hyperparams['code_upperbound'])
        return individual

    def crossover(parent1, parent2):
        # Perform crossover between two parents
        child = parent1.copy()
        for i in range(len(child)):
            if random.random() < hyperparams['crossover_rate']:
                child[i] = parent2[i]
        return child

    def select_parent(population, scores):
        # Perform tournament selection
        tournament_size = min(len(population), int(len(population) * hyperparams['selection_pressure']))
        selected_indices = random.sample(range(len(population)), tournament_size)
        selected_scores = [scores[i] for i in selected_indices]
        winner_index = selected_indices[selected_scores.index(min(selected_scores))]
        return population[winner_index]

    def create_new_individual(population, scores):
        # Create a new individual using crossover and mutation
        if hyperparams['elitism'] and best_individual is not None:
            parent1 = best_individual
        else:
            parent1 = select_parent(population, scores)

        parent2 = select_parent(population, scores)
        child = crossover(parent1, parent2)
        child = mutate(child)
        return child

    # Convert history_population to a list of numpy arrays and fitness_scores to a list of scores
    population = [np.array(individual) for key in sorted(history_populations.keys()) for individual in history_populations[key]]
    scores = [score for key in sorted(fitness_scores.keys()) for score in fitness_scores[key]]

    # Generate new individuals
    new_individuals = []
    for _ in range(new_individuals_numbers):
        if len(population) > 0:
            new_individual = create_new_individual(population, scores)
        else:
            # If there is no history population, create a random individual
            new_individual = np.random.randint(1, hyperparams['code_upperbound'] + 1, len(best_individual))
        new_individuals.append(new_individual)

    return new_individuals
