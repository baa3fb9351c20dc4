# Hidden Markov machinery: skeleton estimation, HMM core and Baum-Welch
